"""Assembly of the equilibrium-gap identification system.

Inserting candidate stiffness components into the discrete internal force
turns equilibrium into an overdetermined linear system in the six unknowns:
one equation per free DOF (zero right-hand side under displacement control)
plus one per measured reaction sum. The normal matrix of the weighted system
is the 6x6 object whose conditioning the specimen design optimises.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigError, ParameterError
from .mesh import BoundarySetup, ElementBasis, StructuredMesh, simp_density

# Slots of the 3x6 strain arrangement: (row, column, strain component).
_STRAIN_SLOTS = (
    (0, 0, 0), (0, 1, 1), (0, 2, 2),
    (1, 1, 0), (1, 3, 1), (1, 4, 2),
    (2, 2, 0), (2, 4, 1), (2, 5, 2),
)


def strain_matrix(eps_hat: np.ndarray) -> np.ndarray:
    """Arrange Voigt strains into the 3x6 matrix with eps_tilde @ theta = D @ eps_hat.

    Works on a single strain vector (3,) or any batch (..., 3), returning
    (..., 3, 6).
    """
    eps_hat = np.asarray(eps_hat, dtype=float)
    out = np.zeros(eps_hat.shape[:-1] + (3, 6))
    for row, col, comp in _STRAIN_SLOTS:
        out[..., row, col] = eps_hat[..., comp]
    return out


def element_A(strains_gp: np.ndarray, basis: ElementBasis) -> np.ndarray:
    """Kinematic element matrix A_e (8x6) from the four Gauss-point strains.

    A_e @ theta equals the element internal force vector at unit density.
    """
    eps_tilde = strain_matrix(strains_gp)
    return np.einsum("gki,gkj,g->ij", basis.B, eps_tilde, basis.detJ_w)


def element_A_batch(strains: np.ndarray, basis: ElementBasis) -> np.ndarray:
    """Vectorised :func:`element_A` over all elements, shape (n_e, 8, 6)."""
    eps_tilde = strain_matrix(strains)
    return np.einsum("gki,egkj,g->eij", basis.B, eps_tilde, basis.detJ_w)


def assemble_A_glob(
    rho_phys: np.ndarray,
    strains: np.ndarray,
    mesh: StructuredMesh,
    A_e: np.ndarray | None = None,
) -> np.ndarray:
    """Row-wise assembly of the density-scaled element kinematic matrices.

    Purely kinematic: depends on the strain data and the topology, never on
    the stiffness components being identified.
    """
    if A_e is None:
        A_e = element_A_batch(strains, mesh.basis)
    rho_t = simp_density(np.asarray(rho_phys, dtype=float))
    scaled = (rho_t[:, None, None] * A_e).reshape(-1, 6)
    rows = mesh.elem_dofs.ravel()
    A_glob = np.empty((mesh.n_dofs, 6))
    for k in range(6):
        A_glob[:, k] = np.bincount(rows, weights=scaled[:, k], minlength=mesh.n_dofs)
    return A_glob


def consistent_weights(boundary: BoundarySetup) -> tuple[float, float]:
    """Weights that make the normal-matrix eigenvalues mesh independent.

    The reaction weight is the count ratio of measured fixed DOFs to free
    DOFs; the scale weight is the square root of the total equation count.
    """
    n_free = boundary.free_dofs.size
    if n_free == 0:
        raise ConfigError("boundary setup leaves no free DOFs")
    n_fix_meas = sum(s.dofs.size for s in boundary.subsets)
    return n_fix_meas / n_free, float(np.sqrt(n_fix_meas + n_free))


@dataclass(frozen=True)
class WeightedSystem:
    """Weighted identification system and its 6x6 normal matrix.

    ``A_free`` holds the free-DOF rows (mm), ``A_fix`` the per-subset
    column sums (mm), ``A_eqb`` the normal matrix (mm^2) and ``b_eqb`` the
    normal right-hand side (force times length), or None when no reactions
    were supplied (design mode needs only the matrix).
    """

    A_free: np.ndarray
    A_fix: np.ndarray
    reactions: np.ndarray | None
    lambda_r: float
    lambda_q: float
    A_eqb: np.ndarray
    b_eqb: np.ndarray | None

    @cached_property
    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """The explicit weighted (A, b) stack; for diagnostics and tests."""
        sq, sr = np.sqrt(self.lambda_q), np.sqrt(self.lambda_r)
        A = sq * np.vstack([self.A_free, sr * self.A_fix])
        r = np.zeros(self.A_fix.shape[0]) if self.reactions is None else self.reactions
        b = sq * np.concatenate([np.zeros(self.A_free.shape[0]), sr * r])
        return A, b


def build_weighted_system(
    A_glob: np.ndarray,
    boundary: BoundarySetup,
    reactions: np.ndarray | None = None,
    lambda_r: float = 1.0,
    lambda_q: float = 1.0,
) -> WeightedSystem:
    """Assemble the weighted system and its normal matrix.

    Fixed-DOF rows are aggregated per measured subset; fixed DOFs outside
    every subset carry unmeasured reactions and drop out of the system.
    """
    if reactions is not None:
        reactions = np.asarray(reactions, dtype=float)
        if reactions.shape != (len(boundary.subsets),):
            raise ParameterError(
                f"expected {len(boundary.subsets)} reaction values, got {reactions.shape}"
            )
    A_free = A_glob[boundary.free_dofs]
    A_fix = np.array([A_glob[s.dofs].sum(axis=0) for s in boundary.subsets])
    A_eqb = lambda_q * (A_free.T @ A_free + lambda_r * (A_fix.T @ A_fix))
    A_eqb = 0.5 * (A_eqb + A_eqb.T)
    b_eqb = None if reactions is None else lambda_q * lambda_r * (A_fix.T @ reactions)
    return WeightedSystem(
        A_free=A_free,
        A_fix=A_fix,
        reactions=reactions,
        lambda_r=lambda_r,
        lambda_q=lambda_q,
        A_eqb=A_eqb,
        b_eqb=b_eqb,
    )
