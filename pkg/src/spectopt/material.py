"""Plane-stress stiffness parameterisations.

Stiffness is carried as the six independent components of the symmetric
3x3 plane-stress matrix in Voigt order (engineering shear, gamma = 2*eps12):

    [D11, D12, D16, D22, D26, D66]

Constructors cover isotropic materials, orthotropic materials rotated by an
anisotropy angle ``beta``, and the dimensionless anisotropy descriptors
(stiffness ratio, shear ratio) that characterise an orthotropic material
independently of the absolute modulus scale.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

#: Component names in storage order.
COMPONENT_NAMES = ("D11", "D12", "D16", "D22", "D26", "D66")

#: Default modulus scale (GPa) used when only dimensionless ratios are given.
DEFAULT_E_SCALE = 200.0

# Maps vector storage order onto the symmetric 3x3 matrix.
_MATRIX_INDEX = np.array([[0, 1, 2], [1, 3, 4], [2, 4, 5]])


def _require_positive(name: str, value: float) -> None:
    if not value > 0.0:
        raise ParameterError(f"{name} must be positive, got {value!r}")


@dataclass(frozen=True)
class StiffnessVector:
    """Six plane-stress stiffness components (GPa), Voigt order.

    The encoded 3x3 matrix must be symmetric positive definite; violation
    raises :class:`ParameterError` at construction time.
    """

    components: np.ndarray

    def __post_init__(self):
        comps = np.asarray(self.components, dtype=float)
        if comps.shape != (6,):
            raise ParameterError(f"expected 6 stiffness components, got shape {comps.shape}")
        comps = comps.copy()
        comps.setflags(write=False)
        object.__setattr__(self, "components", comps)
        if np.min(np.linalg.eigvalsh(self.matrix())) <= 0.0:
            raise ParameterError("stiffness matrix is not positive definite")

    def matrix(self) -> np.ndarray:
        """Return the symmetric 3x3 plane-stress stiffness matrix."""
        return self.components[_MATRIX_INDEX]

    @classmethod
    def from_matrix(cls, D: np.ndarray, rtol: float = 1e-10) -> "StiffnessVector":
        D = np.asarray(D, dtype=float)
        if D.shape != (3, 3):
            raise ParameterError(f"expected a 3x3 matrix, got shape {D.shape}")
        if not np.allclose(D, D.T, rtol=rtol, atol=rtol * np.abs(D).max()):
            raise ParameterError("stiffness matrix is not symmetric")
        Ds = 0.5 * (D + D.T)
        return cls(np.array([Ds[0, 0], Ds[0, 1], Ds[0, 2], Ds[1, 1], Ds[1, 2], Ds[2, 2]]))


@dataclass(frozen=True)
class OrthotropicParams:
    """Engineering constants of a rotated orthotropic sheet.

    ``E_xx`` is the strong-axis modulus (GPa), ``E_yy`` the weak-axis modulus,
    ``G_xy`` the in-plane shear modulus, ``nu_xy`` the major Poisson ratio and
    ``beta`` the counterclockwise angle (degrees) of the strong axis from the
    first global axis.
    """

    E_xx: float
    E_yy: float
    G_xy: float
    nu_xy: float
    beta: float

    def __post_init__(self):
        _require_positive("E_xx", self.E_xx)
        _require_positive("E_yy", self.E_yy)
        _require_positive("G_xy", self.G_xy)
        if not 0.0 <= self.beta <= 90.0:
            raise ParameterError(f"beta must lie in [0, 90] degrees, got {self.beta!r}")
        if not self.nu_xy**2 * self.E_yy / self.E_xx < 1.0:
            raise ParameterError("plane-stress compliance is not positive definite")


@dataclass(frozen=True)
class AnisotropyDescriptors:
    """Dimensionless stiffness ratio and shear ratio of an orthotropic sheet."""

    alpha1: float
    alpha2: float


def isotropic_stiffness(E: float, nu: float) -> StiffnessVector:
    """Plane-stress stiffness of an isotropic material.

    D11 = D22 = E/(1 - nu^2), D12 = nu*D11, D66 = E/(2(1 + nu)) and no
    normal-shear coupling.
    """
    _require_positive("E", E)
    if not 0.0 <= nu < 0.5:
        raise ParameterError(f"nu must lie in [0, 0.5), got {nu!r}")
    d11 = E / (1.0 - nu * nu)
    return StiffnessVector(np.array([d11, nu * d11, 0.0, d11, 0.0, E / (2.0 * (1.0 + nu))]))


def _stress_rotation(angle_deg: float) -> np.ndarray:
    """Voigt stress rotation onto a frame rotated by ``angle_deg`` (ccw)."""
    a = np.deg2rad(angle_deg)
    c, s = np.cos(a), np.sin(a)
    return np.array(
        [
            [c * c, s * s, 2.0 * c * s],
            [s * s, c * c, -2.0 * c * s],
            [-c * s, c * s, c * c - s * s],
        ]
    )


def rotate_stiffness(D: np.ndarray, angle_deg: float) -> np.ndarray:
    """Express a stiffness matrix in a frame where the material sits at +angle.

    If ``D`` holds the components in the material frame, the result holds the
    components in a global frame from which the material frame appears rotated
    counterclockwise by ``angle_deg``. Engineering-shear Voigt convention.
    """
    R = _stress_rotation(-angle_deg)
    out = R @ np.asarray(D, dtype=float) @ R.T
    return 0.5 * (out + out.T)


def orthotropic_local_matrix(p: OrthotropicParams) -> np.ndarray:
    """Plane-stress stiffness matrix in the material frame (no rotation)."""
    nu_yx = p.nu_xy * p.E_yy / p.E_xx
    den = 1.0 - p.nu_xy * nu_yx
    return np.array(
        [
            [p.E_xx / den, p.nu_xy * p.E_yy / den, 0.0],
            [p.nu_xy * p.E_yy / den, p.E_yy / den, 0.0],
            [0.0, 0.0, p.G_xy],
        ]
    )


def orthotropic_stiffness(p: OrthotropicParams) -> StiffnessVector:
    """Global-frame stiffness of an orthotropic sheet rotated by ``p.beta``."""
    local = orthotropic_local_matrix(p)
    if p.beta == 0.0:
        return StiffnessVector.from_matrix(local)
    return StiffnessVector.from_matrix(rotate_stiffness(local, p.beta))


def saint_venant_shear(E_xx: float, E_yy: float, nu_xy: float) -> float:
    """Shear modulus scale 1/G = 1/E_xx + 1/E_yy + 2*nu_xy/E_xx."""
    inv = 1.0 / E_xx + 1.0 / E_yy + 2.0 * nu_xy / E_xx
    if not inv > 0.0:
        raise ParameterError("shear reference modulus is not positive")
    return 1.0 / inv


def anisotropy_ratios(p: OrthotropicParams) -> AnisotropyDescriptors:
    """Stiffness ratio E_xx/E_yy and shear ratio G_xy/G_sv of ``p``.

    Both equal one for an isotropic material.
    """
    g_sv = saint_venant_shear(p.E_xx, p.E_yy, p.nu_xy)
    return AnisotropyDescriptors(alpha1=p.E_xx / p.E_yy, alpha2=p.G_xy / g_sv)


def params_from_descriptors(
    alpha1: float,
    alpha2: float,
    beta: float,
    nu_xy: float = 0.3,
    E_scale: float = DEFAULT_E_SCALE,
) -> OrthotropicParams:
    """Engineering constants realising the given anisotropy descriptors.

    Fixes the strong-axis modulus at ``E_scale``; the normalised design cost
    makes the absolute scale irrelevant, only the ratios matter.
    """
    _require_positive("alpha1", alpha1)
    _require_positive("alpha2", alpha2)
    e_xx = E_scale
    e_yy = e_xx / alpha1
    g_xy = alpha2 * saint_venant_shear(e_xx, e_yy, nu_xy)
    return OrthotropicParams(E_xx=e_xx, E_yy=e_yy, G_xy=g_xy, nu_xy=nu_xy, beta=beta)


def engineering_constants(theta: np.ndarray, beta: float) -> dict:
    """Extract (E_xx, E_yy, G_xy, nu_xy) from identified stiffness components.

    ``theta`` holds global-frame components; ``beta`` is the known material
    orientation used to rotate them back into the material frame before
    inverting to compliance. Raises :class:`ParameterError` if the rotated
    matrix is singular.
    """
    D_glob = np.asarray(theta, dtype=float)[_MATRIX_INDEX]
    D_loc = rotate_stiffness(D_glob, -beta)
    try:
        S = np.linalg.inv(D_loc)
    except np.linalg.LinAlgError as exc:
        raise ParameterError("identified stiffness matrix is singular") from exc
    if S[0, 0] == 0.0 or S[1, 1] == 0.0 or S[2, 2] == 0.0:
        raise ParameterError("identified compliance has a vanishing diagonal")
    return {
        "E_xx": 1.0 / S[0, 0],
        "E_yy": 1.0 / S[1, 1],
        "G_xy": 1.0 / S[2, 2],
        "nu_xy": -S[0, 1] / S[0, 0],
    }


def orthotropic_grid(
    alpha1_values=(4.0, 8.0, 12.0, 16.0, 20.0),
    alpha2_values=(0.5, 0.75, 1.0, 1.25, 1.5),
    beta_values=(0.0, 15.0, 30.0, 45.0, 60.0, 75.0, 90.0),
) -> list[tuple[float, float, float]]:
    """Default benchmark grid of (alpha1, alpha2, beta) combinations."""
    return [(a1, a2, b) for a1 in alpha1_values for a2 in alpha2_values for b in beta_values]
