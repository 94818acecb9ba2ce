"""Structured bilinear-quadrilateral plane-stress finite element core.

Meshes are regular grids of congruent square elements. Node numbering is
row-major (x fastest), DOFs are interleaved (x then y per node), elements are
numbered row-major with counterclockwise local node order. Loading is
displacement controlled: prescribed edge displacements, zero external force
on the free DOFs.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, ParameterError, SolverError
from .material import StiffnessVector

#: Density floor of the stiffness interpolation.
RHO_MIN = 1e-9

_GP = 1.0 / np.sqrt(3.0)
#: Parent coordinates of the 2x2 Gauss points (weights are all one).
GAUSS_POINTS = np.array([[-_GP, -_GP], [_GP, -_GP], [_GP, _GP], [-_GP, _GP]])

# Local node corners in parent coordinates, counterclockwise.
_CORNERS = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


def shape_functions(xi: float, eta: float) -> np.ndarray:
    """Bilinear shape functions at a parent-space point, shape (4,)."""
    return 0.25 * (1.0 + _CORNERS[:, 0] * xi) * (1.0 + _CORNERS[:, 1] * eta)


def shape_gradients(xi: float, eta: float) -> np.ndarray:
    """Parent-space shape function gradients, shape (4, 2)."""
    dxi = 0.25 * _CORNERS[:, 0] * (1.0 + _CORNERS[:, 1] * eta)
    deta = 0.25 * _CORNERS[:, 1] * (1.0 + _CORNERS[:, 0] * xi)
    return np.column_stack([dxi, deta])


@dataclass(frozen=True)
class ElementBasis:
    """Per-Gauss-point strain matrices of the congruent square element.

    ``B`` has shape (4, 3, 8): Voigt strain [eps11, eps22, gamma12] from the
    interleaved element displacement vector at each of the 4 Gauss points.
    ``detJ_w`` holds det(J) times the quadrature weight per point.
    """

    B: np.ndarray
    detJ_w: np.ndarray


def element_basis(L_e: float) -> ElementBasis:
    B = np.zeros((4, 3, 8))
    for g, (xi, eta) in enumerate(GAUSS_POINTS):
        grads = shape_gradients(xi, eta) * (2.0 / L_e)
        B[g, 0, 0::2] = grads[:, 0]
        B[g, 1, 1::2] = grads[:, 1]
        B[g, 2, 0::2] = grads[:, 1]
        B[g, 2, 1::2] = grads[:, 0]
    detJ_w = np.full(4, (L_e / 2.0) ** 2)
    B.setflags(write=False)
    detJ_w.setflags(write=False)
    return ElementBasis(B=B, detJ_w=detJ_w)


class StructuredMesh:
    """Regular grid of nx-by-ny square elements over an Lx-by-Ly rectangle."""

    def __init__(self, nx: int, ny: int, Lx: float, Ly: float):
        if nx < 1 or ny < 1:
            raise ConfigError(f"element counts must be positive, got {nx}x{ny}")
        if Lx <= 0 or Ly <= 0:
            raise ConfigError(f"domain size must be positive, got {Lx}x{Ly}")
        if abs(Lx / nx - Ly / ny) > 1e-12 * (Lx / nx):
            raise ConfigError(
                f"elements must be square: Lx/nx = {Lx / nx!r} differs from Ly/ny = {Ly / ny!r}"
            )
        self.nx = int(nx)
        self.ny = int(ny)
        self.Lx = float(Lx)
        self.Ly = float(Ly)
        self.L_e = self.Lx / self.nx
        self.n_elements = self.nx * self.ny
        self.n_nodes = (self.nx + 1) * (self.ny + 1)
        self.n_dofs = 2 * self.n_nodes

        ix, iy = np.meshgrid(np.arange(self.nx + 1), np.arange(self.ny + 1))
        self.node_coords = np.column_stack([ix.ravel() * self.L_e, iy.ravel() * self.L_e])

        ex, ey = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        ex, ey = ex.ravel(), ey.ravel()
        n00 = ey * (self.nx + 1) + ex
        self.elem_nodes = np.column_stack([n00, n00 + 1, n00 + self.nx + 2, n00 + self.nx + 1])
        self.elem_dofs = np.empty((self.n_elements, 8), dtype=np.int64)
        self.elem_dofs[:, 0::2] = 2 * self.elem_nodes
        self.elem_dofs[:, 1::2] = 2 * self.elem_nodes + 1
        self.elem_centers = self.node_coords[self.elem_nodes].mean(axis=1)

    def __eq__(self, other):
        return (
            isinstance(other, StructuredMesh)
            and (self.nx, self.ny, self.Lx, self.Ly) == (other.nx, other.ny, other.Lx, other.Ly)
        )

    def __hash__(self):
        return hash((self.nx, self.ny, self.Lx, self.Ly))

    def __repr__(self):
        return f"StructuredMesh({self.nx}x{self.ny}, {self.Lx}x{self.Ly} mm)"

    @cached_property
    def basis(self) -> ElementBasis:
        return element_basis(self.L_e)

    @cached_property
    def _assembly_pattern(self):
        rows = np.repeat(self.elem_dofs, 8, axis=1).ravel()
        cols = np.tile(self.elem_dofs, (1, 8)).ravel()
        return rows, cols

    def node_indices(self, edge: str) -> np.ndarray:
        """Node indices of a domain edge ('bottom', 'top', 'left', 'right')."""
        ids = np.arange(self.n_nodes).reshape(self.ny + 1, self.nx + 1)
        if edge == "bottom":
            return ids[0]
        if edge == "top":
            return ids[-1]
        if edge == "left":
            return ids[:, 0]
        if edge == "right":
            return ids[:, -1]
        raise ValueError(f"unknown edge {edge!r}")

    def element_grid(self, field: np.ndarray) -> np.ndarray:
        """Reshape a per-element field into its (ny, nx) grid (row 0 at y=0)."""
        return np.asarray(field).reshape(self.ny, self.nx)


def build_mesh(nx: int, ny: int, Lx: float, Ly: float) -> StructuredMesh:
    """Construct a structured mesh of square elements."""
    return StructuredMesh(nx, ny, Lx, Ly)


@dataclass(frozen=True)
class ReactionSubset:
    """Fixed DOFs of one displacement direction whose reaction sum is measured."""

    name: str
    dofs: np.ndarray
    expected_sign: int


@dataclass(frozen=True)
class BoundarySetup:
    """Dirichlet data plus the measured-reaction subsets of a load case."""

    fixed_dofs: np.ndarray
    fixed_values: np.ndarray
    subsets: tuple[ReactionSubset, ...]
    load_case: str
    u_bar: float
    n_dofs: int

    @cached_property
    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.fixed_dofs] = False
        return np.flatnonzero(mask)

    def prescribed_field(self) -> np.ndarray:
        u = np.zeros(self.n_dofs)
        u[self.fixed_dofs] = self.fixed_values
        return u


def _collect_boundary(entries: dict[int, float], subsets, load_case, u_bar, n_dofs):
    dofs = np.array(sorted(entries), dtype=np.int64)
    values = np.array([entries[d] for d in dofs])
    return BoundarySetup(
        fixed_dofs=dofs,
        fixed_values=values,
        subsets=tuple(subsets),
        load_case=load_case,
        u_bar=float(u_bar),
        n_dofs=n_dofs,
    )


def boundary_uniaxial(mesh: StructuredMesh, u_bar: float) -> BoundarySetup:
    """Displacement-controlled tension: full-width grips at bottom and top.

    Both gripped edges clamp u_x; the top edge is pulled to ``u_bar``.
    Measured reactions: vertical force sums on the top and bottom grips.
    """
    if not u_bar > 0:
        raise ParameterError(f"u_bar must be positive, got {u_bar!r}")
    bottom = mesh.node_indices("bottom")
    top = mesh.node_indices("top")
    entries: dict[int, float] = {}
    for n in bottom:
        entries[2 * n] = 0.0
        entries[2 * n + 1] = 0.0
    for n in top:
        entries[2 * n] = 0.0
        entries[2 * n + 1] = u_bar
    subsets = [
        ReactionSubset("top_uy", np.asarray(2 * top + 1, dtype=np.int64), +1),
        ReactionSubset("bottom_uy", np.asarray(2 * bottom + 1, dtype=np.int64), -1),
    ]
    return _collect_boundary(entries, subsets, "uniaxial", u_bar, mesh.n_dofs)


def boundary_biaxial(mesh: StructuredMesh, u_bar: float) -> BoundarySetup:
    """Uniaxial grips plus a horizontal extension of the right edge.

    The right edge is stretched by ``u_bar * Lx/Ly`` with the left edge held,
    excluding the gripped corner nodes, and the right-edge horizontal reaction
    becomes a third measured subset.
    """
    base = boundary_uniaxial(mesh, u_bar)
    entries = dict(zip(base.fixed_dofs.tolist(), base.fixed_values.tolist()))
    u_x = u_bar * mesh.Lx / mesh.Ly
    gripped = set(mesh.node_indices("bottom")) | set(mesh.node_indices("top"))
    right = [n for n in mesh.node_indices("right") if n not in gripped]
    left = [n for n in mesh.node_indices("left") if n not in gripped]
    for n in left:
        entries[2 * n] = 0.0
    for n in right:
        entries[2 * n] = u_x
    subsets = list(base.subsets) + [
        ReactionSubset("right_ux", np.array([2 * n for n in right], dtype=np.int64), +1)
    ]
    return _collect_boundary(entries, subsets, "biaxial", u_bar, mesh.n_dofs)


def element_stiffness(theta: StiffnessVector, L_e: float) -> np.ndarray:
    """8x8 stiffness matrix of one square element (2x2 Gauss quadrature)."""
    D = theta.matrix()
    basis = element_basis(L_e)
    K = np.einsum("gki,kl,glj,g->ij", basis.B, D, basis.B, basis.detJ_w)
    return 0.5 * (K + K.T)


def simp_density(rho_phys: np.ndarray, rho_min: float = RHO_MIN) -> np.ndarray:
    """Penalised stiffness interpolation rho_min + rho^3 (1 - rho_min)."""
    rho_phys = np.asarray(rho_phys)
    return rho_min + rho_phys**3 * (1.0 - rho_min)


def simp_derivative(rho_phys: np.ndarray, rho_min: float = RHO_MIN) -> np.ndarray:
    """Derivative of :func:`simp_density` with respect to the physical density."""
    rho_phys = np.asarray(rho_phys)
    return 3.0 * rho_phys**2 * (1.0 - rho_min)


def assemble_stiffness(
    rho_phys: np.ndarray,
    theta: StiffnessVector,
    mesh: StructuredMesh,
    K_e: np.ndarray | None = None,
) -> sp.csc_matrix:
    """Global stiffness with per-element density interpolation."""
    rho_phys = np.asarray(rho_phys, dtype=float)
    if rho_phys.shape != (mesh.n_elements,):
        raise ParameterError(f"density vector must have length {mesh.n_elements}")
    if rho_phys.min() < 0.0 or rho_phys.max() > 1.0:
        raise ParameterError("physical densities must lie in [0, 1]")
    if K_e is None:
        K_e = element_stiffness(theta, mesh.L_e)
    rho_t = simp_density(rho_phys)
    vals = (rho_t[:, None, None] * K_e).ravel()
    rows, cols = mesh._assembly_pattern
    K = sp.coo_matrix((vals, (rows, cols)), shape=(mesh.n_dofs, mesh.n_dofs))
    return K.tocsc()


class EquilibriumSolver:
    """Factorised Dirichlet-partitioned solver for one stiffness matrix.

    The sparse LU of the free-free block is computed once and reused by the
    forward solve and every adjoint solve on the same density state.
    """

    def __init__(self, K: sp.spmatrix, boundary: BoundarySetup):
        self.K = K.tocsc()
        self.boundary = boundary
        free = boundary.free_dofs
        fixed = boundary.fixed_dofs
        K_csr = self.K.tocsr()
        self.K_ff = K_csr[free][:, free].tocsc()
        self.K_fc = K_csr[free][:, fixed].tocsc()
        try:
            self._lu = spla.splu(self.K_ff)
        except RuntimeError as exc:
            raise SolverError(f"stiffness factorisation failed: {exc}") from exc
        self.forward_solves = 0
        self.adjoint_solves = 0

    def _solve_free(self, rhs: np.ndarray) -> np.ndarray:
        x = self._lu.solve(rhs)
        # One refinement step guards the residual contract on badly scaled voids.
        resid = rhs - self.K_ff @ x
        rhs_norm = np.linalg.norm(rhs)
        if rhs_norm > 0 and np.linalg.norm(resid) > 1e-12 * rhs_norm:
            x = x + self._lu.solve(resid)
            resid = rhs - self.K_ff @ x
            if np.linalg.norm(resid) > 1e-9 * rhs_norm:
                raise SolverError("linear solve residual exceeds 1e-9 relative")
        return x

    def solve(self) -> np.ndarray:
        """Displacement field satisfying equilibrium and the Dirichlet data."""
        bnd = self.boundary
        rhs = -(self.K_fc @ bnd.fixed_values)
        U = bnd.prescribed_field()
        U[bnd.free_dofs] = self._solve_free(rhs) if np.any(bnd.fixed_values) else 0.0
        self.forward_solves += 1
        return U

    def solve_adjoint(self, rhs_full: np.ndarray) -> np.ndarray:
        """Adjoint vector with homogeneous Dirichlet data, zeros on fixed DOFs."""
        gamma = np.zeros(self.boundary.n_dofs)
        gamma[self.boundary.free_dofs] = self._solve_free(rhs_full[self.boundary.free_dofs])
        self.adjoint_solves += 1
        return gamma


def solve_equilibrium(K: sp.spmatrix, boundary: BoundarySetup) -> np.ndarray:
    """One-shot forward solve; see :class:`EquilibriumSolver` for reuse."""
    return EquilibriumSolver(K, boundary).solve()


def gauss_strains(U: np.ndarray, mesh: StructuredMesh) -> np.ndarray:
    """Voigt strains at the 4 Gauss points of every element, shape (n_e, 4, 3)."""
    U_e = np.asarray(U)[mesh.elem_dofs]
    return np.einsum("gij,ej->egi", mesh.basis.B, U_e)


def reaction_sums(K: sp.spmatrix, U: np.ndarray, boundary: BoundarySetup) -> np.ndarray:
    """Measured reaction force per subset, from the internal force K @ U."""
    F = K @ U
    return np.array([F[s.dofs].sum() for s in boundary.subsets])
