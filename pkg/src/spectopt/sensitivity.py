"""Adjoint gradients of the design costs with respect to design densities.

The chain runs cost -> normal matrix -> global kinematic matrix -> (explicit
density scaling, displacement field) -> physical densities -> projection ->
filter -> design densities. The displacement dependence is collapsed with a
single adjoint solve that reuses the forward factorisation.
"""
from __future__ import annotations

import numpy as np

from . import cost as cost_mod
from .cost import CostContext
from .equilibrium import strain_matrix
from .errors import ConfigError, RunError
from .filtering import projection_derivative
from .mesh import simp_derivative
from .pipeline import ForwardState

#: Hard cap on strain points for the pairwise-distance cost gradient.
MAX_MIN_DIST_POINTS = 6000


def _entry_power(M: np.ndarray, p: float) -> np.ndarray:
    """Gradient of sum(|M|^p) with respect to the entries of M."""
    return p * np.abs(M) ** (p - 1.0) * np.sign(M)


def dcost_dAeqb(A_eqb: np.ndarray, ctx: CostContext, kind: str = "det") -> np.ndarray:
    """6x6 gradient of the selected cost with respect to the normal matrix."""
    A_eqb = np.asarray(A_eqb, dtype=float)
    if kind == "det":
        inv = np.linalg.inv(A_eqb)
        return -cost_mod.det_cost(A_eqb, ctx) * inv.T
    if kind == "kappa_p":
        p = float(ctx.p)
        inv = np.linalg.inv(A_eqb)
        norm_a = np.sum(np.abs(A_eqb) ** p)
        norm_i = np.sum(np.abs(inv) ** p)
        grad = norm_i * _entry_power(A_eqb, p) - norm_a * (inv.T @ _entry_power(inv, p) @ inv.T)
        return grad / ctx.kappa_p_init**p
    if kind == "kappa_f":
        inv = np.linalg.inv(A_eqb)
        na = np.linalg.norm(A_eqb)
        ni = np.linalg.norm(inv)
        grad = (ni / na) * A_eqb - na / ni * (inv.T @ inv @ inv.T)
        return grad / cost_mod.frobenius_cond(ctx.A_eqb_init)
    raise ConfigError(f"no normal-matrix gradient for cost {kind!r}")


def dcost_dAglob(state: ForwardState, G: np.ndarray) -> np.ndarray:
    """Pull a normal-matrix gradient back onto the rows of A_glob.

    Free rows scale with the free block, measured fixed DOFs share their
    subset's aggregated row, and unmeasured fixed DOFs do not participate.
    """
    system = state.problem
    sym = 0.5 * (G + G.T)
    boundary = system.boundary
    lam_q, lam_r = state.system.lambda_q, state.system.lambda_r
    W = np.zeros_like(state.A_glob)
    W[boundary.free_dofs] = 2.0 * lam_q * (state.system.A_free @ sym)
    fix_rows = 2.0 * lam_q * lam_r * (state.system.A_fix @ sym)
    for s, subset in enumerate(boundary.subsets):
        W[subset.dofs] = fix_rows[s]
    return W


def partial_cost_wrt_rho_phys(state: ForwardState, W: np.ndarray) -> np.ndarray:
    """Explicit density derivative through the scaling of A_glob, length n_e."""
    W_e = W[state.problem.mesh.elem_dofs]
    contraction = np.einsum("eak,eak->e", W_e, state.A_e)
    return simp_derivative(state.triple.physical) * contraction


def adjoint_rhs(state: ForwardState, W: np.ndarray) -> np.ndarray:
    """Displacement derivative of the cost, assembled over all elements.

    Uses the linearity of the element kinematic matrix in the element
    displacements: contracting W with its displacement Jacobian reduces to a
    per-Gauss-point 3-vector pushed back through the strain matrices.
    """
    mesh = state.problem.mesh
    basis = mesh.basis
    W_e = W[mesh.elem_dofs]
    M = np.einsum("gka,eaf->egkf", basis.B, W_e)
    m = np.empty(M.shape[:3])
    m[..., 0] = M[..., 0, 0] + M[..., 1, 1] + M[..., 2, 2]
    m[..., 1] = M[..., 0, 1] + M[..., 1, 3] + M[..., 2, 4]
    m[..., 2] = M[..., 0, 2] + M[..., 1, 4] + M[..., 2, 5]
    rhs_e = np.einsum("gka,egk,g->ea", basis.B, m, basis.detJ_w)
    rhs_e *= state.rho_tilde[:, None]
    return np.bincount(
        mesh.elem_dofs.ravel(), weights=rhs_e.ravel(), minlength=mesh.n_dofs
    )


def element_A_jacobian(basis) -> np.ndarray:
    """Constant Jacobian dA_e/dU_e, shape (8, 6, 8)."""
    jac = np.zeros((8, 6, 8))
    for b in range(8):
        dU = np.zeros(8)
        dU[b] = 1.0
        d_eps = np.einsum("gij,j->gi", basis.B, dU)
        jac[:, :, b] = np.einsum("gki,gkj,g->ij", basis.B, strain_matrix(d_eps), basis.detJ_w)
    return jac


def strain_selector() -> np.ndarray:
    """Constant 18x3 selector: vec(strain matrix) = selector @ voigt strain."""
    sel = np.zeros((18, 3))
    for comp in range(3):
        eps = np.zeros(3)
        eps[comp] = 1.0
        sel[:, comp] = strain_matrix(eps).ravel()
    return sel


def _stiffness_adjoint_term(state: ForwardState, gamma: np.ndarray) -> np.ndarray:
    dofs = state.problem.mesh.elem_dofs
    g_e = gamma[dofs]
    U_e = state.U[dofs]
    quad = np.einsum("ea,ab,eb->e", g_e, state.problem.K_e, U_e)
    return simp_derivative(state.triple.physical) * quad


def _min_dist_strain_gradient(state: ForwardState, ctx: CostContext) -> np.ndarray:
    """d(min-distance cost)/d(Voigt strain) per Gauss point, shape (n_e, 4, 3)."""
    strains = state.strains.reshape(-1, 3)
    n = strains.shape[0]
    if n > MAX_MIN_DIST_POINTS:
        raise RunError(
            f"{n} strain points exceed the pairwise-distance budget "
            f"({MAX_MIN_DIST_POINTS}); use a coarser mesh for this cost"
        )
    pts = cost_mod.principal_strains(strains)
    d0 = ctx.kappa_p_init
    p = float(state.problem.p)
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt(np.sum(diff**2, axis=-1))
    np.fill_diagonal(dist, np.inf)
    r = dist / d0
    rp = r**p
    np.fill_diagonal(rp, 0.0)
    S = 0.5 * np.sum(rp)
    # cost = -S^(1/p); accumulate dcost/dpoint over all partners.
    coeff = -(S ** (1.0 / p - 1.0)) / d0**2
    weights = r ** (p - 2.0)
    np.fill_diagonal(weights, 0.0)
    d_pts = coeff * np.einsum("ij,ijk->ik", weights, diff)

    e1, e2, g = strains[:, 0], strains[:, 1], strains[:, 2]
    q = 0.5 * (e1 - e2)
    rad = np.sqrt(q**2 + (0.5 * g) ** 2)
    safe = np.where(rad > 0.0, rad, 1.0)
    qr = np.where(rad > 0.0, q / (2.0 * safe), 0.0)
    gr = np.where(rad > 0.0, g / (4.0 * safe), 0.0)
    d_eps = np.empty_like(strains)
    d_eps[:, 0] = d_pts[:, 0] * (0.5 + qr) + d_pts[:, 1] * (0.5 - qr)
    d_eps[:, 1] = d_pts[:, 0] * (0.5 - qr) + d_pts[:, 1] * (0.5 + qr)
    d_eps[:, 2] = d_pts[:, 0] * gr - d_pts[:, 1] * gr
    return d_eps.reshape(state.strains.shape)


def _min_dist_adjoint_rhs(state: ForwardState, d_eps: np.ndarray) -> np.ndarray:
    mesh = state.problem.mesh
    rhs_e = np.einsum("gka,egk->ea", mesh.basis.B, d_eps)
    return np.bincount(
        mesh.elem_dofs.ravel(), weights=rhs_e.ravel(), minlength=mesh.n_dofs
    )


def _chain_to_design(state: ForwardState, d_rho_phys: np.ndarray) -> np.ndarray:
    """Pull a physical-density gradient back through projection and filter."""
    ctx = state.problem.filter_ctx
    g = d_rho_phys * projection_derivative(state.triple.averaged, state.psi, state.phi)
    g[ctx.passive] = 0.0
    out = ctx.smooth_adjoint(g)
    out[ctx.passive] = 0.0
    return out


def total_design_gradient(state: ForwardState, ctx: CostContext) -> np.ndarray:
    """Full-chain cost gradient, full element length with zeros on the frame.

    Exactly one adjoint solve per call, reusing the forward factorisation.
    """
    kind = state.problem.cost_kind
    if kind == "min_dist":
        d_eps = _min_dist_strain_gradient(state, ctx)
        rhs = _min_dist_adjoint_rhs(state, d_eps)
        partial = np.zeros(state.problem.mesh.n_elements)
    else:
        G = dcost_dAeqb(state.A_eqb, ctx, kind)
        W = dcost_dAglob(state, G)
        partial = partial_cost_wrt_rho_phys(state, W)
        rhs = adjoint_rhs(state, W)
    gamma = state.solver.solve_adjoint(rhs)
    d_rho_phys = partial - _stiffness_adjoint_term(state, gamma)
    return _chain_to_design(state, d_rho_phys)


def volume_gradient(state: ForwardState) -> np.ndarray:
    """Gradient of the mean physical density, zeros on the frame."""
    n_e = state.problem.mesh.n_elements
    return _chain_to_design(state, np.full(n_e, 1.0 / n_e))
