"""Density regularisation and binarisation.

A weight-averaging filter (screened-Poisson PDE by default, explicit
convolution as the reference alternative) smears the design densities; a
tanh projection then pushes the averaged field towards 0/1, sharpened by a
continuation parameter that doubles every optimisation loop. A passive frame
of border elements is held at density one to protect the gripped edges.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.ndimage
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, ParameterError
from .mesh import StructuredMesh

#: Default ratio of filter-neighbourhood area to domain area.
DEFAULT_SBAR_FD = 0.15

#: Final projection strength of the default continuation.
DEFAULT_PSI_MAX = 512


def default_frame_layers(mesh: StructuredMesh) -> int:
    """Passive frame thickness: 5% of the smaller grid dimension, at least 2."""
    return max(2, math.ceil(0.05 * min(mesh.nx, mesh.ny)))


def frame_mask(mesh: StructuredMesh, layers: int) -> np.ndarray:
    """Boolean per-element mask of the passive border frame."""
    if layers < 0 or 2 * layers >= min(mesh.nx, mesh.ny):
        raise ConfigError(
            f"frame of {layers} layers leaves no design region on a {mesh.nx}x{mesh.ny} grid"
        )
    mask = np.zeros((mesh.ny, mesh.nx), dtype=bool)
    if layers:
        mask[:layers, :] = True
        mask[-layers:, :] = True
        mask[:, :layers] = True
        mask[:, -layers:] = True
    return mask.ravel()


def filter_radius(mesh: StructuredMesh, sbar_fd: float = DEFAULT_SBAR_FD) -> tuple[float, float]:
    """(absolute radius in mm, radius in element units) for a given area ratio."""
    if not sbar_fd > 0:
        raise ConfigError(f"sbar_fd must be positive, got {sbar_fd!r}")
    r_abs = math.sqrt(sbar_fd * mesh.Lx * mesh.Ly / math.pi)
    return r_abs, r_abs / mesh.L_e


def _scalar_element_matrices(L_e: float) -> tuple[np.ndarray, np.ndarray]:
    """Laplacian and mass matrices of the bilinear scalar square element."""
    K = np.array(
        [
            [4.0, -1.0, -2.0, -1.0],
            [-1.0, 4.0, -1.0, -2.0],
            [-2.0, -1.0, 4.0, -1.0],
            [-1.0, -2.0, -1.0, 4.0],
        ]
    ) / 6.0
    M = (
        L_e**2
        / 36.0
        * np.array(
            [
                [4.0, 2.0, 1.0, 2.0],
                [2.0, 4.0, 2.0, 1.0],
                [1.0, 2.0, 4.0, 2.0],
                [2.0, 1.0, 2.0, 4.0],
            ]
        )
    )
    return K, M


@dataclass
class FilterContext:
    """Precomputed state of the density filter and passive frame.

    The screened-Poisson operator is factorised once; both the filter and its
    adjoint reuse the factorisation (the discrete filter map is symmetric).
    """

    mesh: StructuredMesh
    kind: str
    sbar_fd: float
    r_min_abs: float
    r_min: float
    R_min_abs: float
    passive: np.ndarray
    design_indices: np.ndarray
    _solve: object = field(repr=False, default=None)
    _T: sp.csr_matrix = field(repr=False, default=None)
    _kernel: np.ndarray = field(repr=False, default=None)
    _kernel_weights: np.ndarray = field(repr=False, default=None)

    @property
    def n_design(self) -> int:
        return self.design_indices.size

    def full_field(self, rho_design: np.ndarray) -> np.ndarray:
        """Scatter design densities into the full field, frame at one."""
        rho_design = np.asarray(rho_design, dtype=float)
        if rho_design.shape != (self.n_design,):
            raise ParameterError(f"expected {self.n_design} design densities")
        full = np.ones(self.mesh.n_elements)
        full[self.design_indices] = rho_design
        return full

    def smooth(self, rho_full: np.ndarray) -> np.ndarray:
        """Apply the weight-averaging filter to a full density field."""
        if self.kind == "pde":
            return self._T.T @ self._solve(self._T @ rho_full)
        return _convolve_normalised(rho_full, self.mesh, self._kernel, self._kernel_weights)

    def smooth_adjoint(self, g_full: np.ndarray) -> np.ndarray:
        """Apply the transpose of the filter map (chain rule pullback)."""
        if self.kind == "pde":
            return self.smooth(g_full)
        grid = self.mesh.element_grid(np.asarray(g_full) / self._kernel_weights.ravel())
        out = scipy.ndimage.convolve(grid, self._kernel, mode="constant", cval=0.0)
        return out.ravel()


def _convolution_kernel(r_min: float) -> np.ndarray:
    m = int(math.ceil(r_min)) - 1
    if m < 0:
        m = 0
    di, dj = np.ogrid[-m : m + 1, -m : m + 1]
    return np.maximum(0.0, r_min - np.sqrt(di**2.0 + dj**2.0))


def _convolve_normalised(rho_full, mesh, kernel, weights) -> np.ndarray:
    grid = mesh.element_grid(np.asarray(rho_full, dtype=float))
    num = scipy.ndimage.convolve(grid, kernel, mode="constant", cval=0.0)
    return (num / weights).ravel()


def make_filter_context(
    mesh: StructuredMesh,
    kind: str = "pde",
    sbar_fd: float = DEFAULT_SBAR_FD,
    frame_layers: int | None = None,
) -> FilterContext:
    """Build the filter operator, its factorisation and the passive frame."""
    if kind not in ("pde", "conv"):
        raise ConfigError(f"filter kind must be 'pde' or 'conv', got {kind!r}")
    r_abs, r_min = filter_radius(mesh, sbar_fd)
    layers = default_frame_layers(mesh) if frame_layers is None else int(frame_layers)
    passive = frame_mask(mesh, layers)
    ctx = FilterContext(
        mesh=mesh,
        kind=kind,
        sbar_fd=sbar_fd,
        r_min_abs=r_abs,
        r_min=r_min,
        R_min_abs=r_abs / (2.0 * math.sqrt(3.0)),
        passive=passive,
        design_indices=np.flatnonzero(~passive),
    )
    if kind == "pde":
        ctx._solve, ctx._T = _factorise_pde(mesh, ctx.R_min_abs)
    else:
        ctx._kernel = _convolution_kernel(r_min)
        ctx._kernel_weights = scipy.ndimage.convolve(
            np.ones((mesh.ny, mesh.nx)), ctx._kernel, mode="constant", cval=0.0
        )
    return ctx


def _factorise_pde(mesh: StructuredMesh, R_abs: float):
    K_lap, M_mass = _scalar_element_matrices(mesh.L_e)
    KF_e = R_abs**2 * K_lap + M_mass
    rows = np.repeat(mesh.elem_nodes, 4, axis=1).ravel()
    cols = np.tile(mesh.elem_nodes, (1, 4)).ravel()
    KF = sp.coo_matrix(
        (np.tile(KF_e.ravel(), mesh.n_elements), (rows, cols)),
        shape=(mesh.n_nodes, mesh.n_nodes),
    ).tocsc()
    # Scaled element-to-node map making the filter map symmetric: the forward
    # map T' KF^-1 T then preserves constants exactly and conserves the mean.
    t_val = mesh.L_e / 4.0
    T = sp.coo_matrix(
        (
            np.full(4 * mesh.n_elements, t_val),
            (mesh.elem_nodes.ravel(), np.repeat(np.arange(mesh.n_elements), 4)),
        ),
        shape=(mesh.n_nodes, mesh.n_elements),
    ).tocsr()
    return spla.factorized(KF), T


def pde_filter(rho: np.ndarray, ctx: FilterContext) -> np.ndarray:
    """Screened-Poisson weight averaging of a full density field."""
    if ctx.kind != "pde":
        raise ConfigError("filter context was not built for the PDE filter")
    return ctx.smooth(np.asarray(rho, dtype=float))


def convolution_filter(rho: np.ndarray, r_min: float, mesh: StructuredMesh) -> np.ndarray:
    """Distance-weighted convolution averaging with kernel max(0, r_min - d).

    Distances are measured between element centres in element units; edge
    elements renormalise over the part of the neighbourhood inside the domain.
    """
    kernel = _convolution_kernel(r_min)
    weights = scipy.ndimage.convolve(
        np.ones((mesh.ny, mesh.nx)), kernel, mode="constant", cval=0.0
    )
    return _convolve_normalised(rho, mesh, kernel, weights)


def project(rho_avg: np.ndarray, psi: float, phi: float = 0.5) -> np.ndarray:
    """Smooth tanh thresholding of averaged densities about ``phi``."""
    if not psi > 0:
        raise ParameterError(f"psi must be positive, got {psi!r}")
    if not 0.0 < phi < 1.0:
        raise ParameterError(f"phi must lie in (0, 1), got {phi!r}")
    rho_avg = np.asarray(rho_avg, dtype=float)
    den = math.tanh(psi * phi) + math.tanh(psi * (1.0 - phi))
    return (math.tanh(psi * phi) + np.tanh(psi * (rho_avg - phi))) / den


def projection_derivative(rho_avg: np.ndarray, psi: float, phi: float = 0.5) -> np.ndarray:
    """Elementwise derivative of :func:`project` with respect to rho_avg."""
    rho_avg = np.asarray(rho_avg, dtype=float)
    den = math.tanh(psi * phi) + math.tanh(psi * (1.0 - phi))
    return psi / (np.cosh(psi * (rho_avg - phi)) ** 2 * den)


def continuation_schedule(psi_max: int = DEFAULT_PSI_MAX) -> list[int]:
    """Doubling schedule 1, 2, 4, ..., psi_max of the projection strength."""
    n = math.log2(psi_max)
    if psi_max < 1 or n != int(n):
        raise ConfigError(f"psi_max must be a power of two >= 1, got {psi_max!r}")
    return [2**k for k in range(int(n) + 1)]


def grey_index(rho_phys: np.ndarray) -> float:
    """Discreteness measure 4/n_e * sum(rho (1 - rho)); 1.0 means 100% grey."""
    rho_phys = np.asarray(rho_phys, dtype=float)
    return float(4.0 * np.mean(rho_phys * (1.0 - rho_phys)))


def hard_threshold(rho_phys: np.ndarray, passive: np.ndarray | None = None) -> np.ndarray:
    """Sharp 0-1 design: one at densities >= 0.5 and on passive elements."""
    out = np.where(np.asarray(rho_phys, dtype=float) >= 0.5, 1.0, 0.0)
    if passive is not None:
        out[passive] = 1.0
    return out


@dataclass(frozen=True)
class DensityTriple:
    """Design, averaged and physical density fields of one filter pass."""

    design: np.ndarray
    averaged: np.ndarray
    physical: np.ndarray


def density_chain(
    rho_design: np.ndarray, ctx: FilterContext, psi: float, phi: float = 0.5
) -> DensityTriple:
    """Full design-to-physical pipeline: scatter, filter, project, fix frame."""
    full = ctx.full_field(rho_design)
    averaged = ctx.smooth(full)
    physical = project(averaged, psi, phi)
    physical[ctx.passive] = 1.0
    return DensityTriple(design=full, averaged=averaged, physical=physical)
