"""Forward evaluation pipeline shared by the optimiser and the benchmarks.

One forward evaluation takes design densities through filter, projection,
equilibrium solve and identification-system assembly, keeping every
intermediate needed by the cost functions and the adjoint gradient.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import cost as cost_mod
from .equilibrium import (
    WeightedSystem,
    assemble_A_glob,
    build_weighted_system,
    consistent_weights,
    element_A_batch,
)
from .errors import ConfigError
from .filtering import DensityTriple, FilterContext, density_chain
from .material import StiffnessVector
from .mesh import (
    BoundarySetup,
    EquilibriumSolver,
    StructuredMesh,
    assemble_stiffness,
    element_stiffness,
    gauss_strains,
    simp_density,
)

#: Costs that the optimiser can differentiate.
OPTIMISABLE_COSTS = ("det", "kappa_p", "kappa_f", "min_dist")


@dataclass
class DesignProblem:
    """Immutable description of one specimen-design task."""

    mesh: StructuredMesh
    boundary: BoundarySetup
    theta: StiffnessVector
    filter_ctx: FilterContext
    cost_kind: str = "det"
    p: int = 8
    lambda_r: float = field(default=None)
    lambda_q: float = field(default=None)
    K_e: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.cost_kind not in OPTIMISABLE_COSTS:
            raise ConfigError(f"unsupported cost {self.cost_kind!r}; use one of {OPTIMISABLE_COSTS}")
        if self.lambda_r is None or self.lambda_q is None:
            lr, lq = consistent_weights(self.boundary)
            self.lambda_r = lr if self.lambda_r is None else self.lambda_r
            self.lambda_q = lq if self.lambda_q is None else self.lambda_q
        if self.K_e is None:
            self.K_e = element_stiffness(self.theta, self.mesh.L_e)

    @property
    def n_design(self) -> int:
        return self.filter_ctx.n_design


@dataclass
class ForwardState:
    """Everything produced by one forward evaluation of a density field."""

    problem: DesignProblem
    psi: float
    phi: float
    triple: DensityTriple
    rho_tilde: np.ndarray
    solver: EquilibriumSolver
    U: np.ndarray
    strains: np.ndarray
    A_e: np.ndarray
    A_glob: np.ndarray
    system: WeightedSystem

    @property
    def rho_phys(self) -> np.ndarray:
        return self.triple.physical

    @property
    def A_eqb(self) -> np.ndarray:
        return self.system.A_eqb

    def volume(self) -> float:
        return float(np.mean(self.triple.physical))


def forward_evaluate(
    problem: DesignProblem,
    rho_design: np.ndarray,
    psi: float,
    phi: float = 0.5,
) -> ForwardState:
    """Filter, project, solve equilibrium and assemble the normal matrix."""
    triple = density_chain(rho_design, problem.filter_ctx, psi, phi)
    return evaluate_physical(problem, triple, psi=psi, phi=phi)


def evaluate_physical(
    problem: DesignProblem,
    triple: DensityTriple,
    psi: float = 1.0,
    phi: float = 0.5,
) -> ForwardState:
    """Forward evaluation of an already-projected physical density field."""
    mesh = problem.mesh
    rho_phys = triple.physical
    K = assemble_stiffness(rho_phys, problem.theta, mesh, K_e=problem.K_e)
    solver = EquilibriumSolver(K, problem.boundary)
    U = solver.solve()
    strains = gauss_strains(U, mesh)
    A_e = element_A_batch(strains, mesh.basis)
    A_glob = assemble_A_glob(rho_phys, strains, mesh, A_e=A_e)
    system = build_weighted_system(
        A_glob,
        problem.boundary,
        lambda_r=problem.lambda_r,
        lambda_q=problem.lambda_q,
    )
    return ForwardState(
        problem=problem,
        psi=psi,
        phi=phi,
        triple=triple,
        rho_tilde=simp_density(rho_phys),
        solver=solver,
        U=U,
        strains=strains,
        A_e=A_e,
        A_glob=A_glob,
        system=system,
    )


def capture_cost_context(state: ForwardState) -> cost_mod.CostContext:
    """Reference normalisation captured at the first evaluation of a run."""
    return cost_mod.CostContext.capture(state.A_eqb, p=state.problem.p)


def evaluate_cost(state: ForwardState, ctx: cost_mod.CostContext):
    """Scalar cost of a forward state under the problem's cost selection.

    The minimum-distance cost interprets the context's ``kappa_p_init`` slot
    as its reference distance; see :func:`min_distance_context`.
    """
    kind = state.problem.cost_kind
    if kind == "det":
        return cost_mod.det_cost(state.A_eqb, ctx)
    if kind == "kappa_p":
        return cost_mod.cost_alt1(state.A_eqb, ctx)
    if kind == "kappa_f":
        return cost_mod.frobenius_cond(state.A_eqb) / cost_mod.frobenius_cond(ctx.A_eqb_init)
    if kind == "min_dist":
        pts = cost_mod.principal_strains(state.strains.reshape(-1, 3))
        return cost_mod.min_distance_cost(pts, state.problem.p, ctx.kappa_p_init)
    raise ConfigError(f"unsupported cost {kind!r}")


def min_distance_context(state: ForwardState) -> cost_mod.CostContext:
    """Cost context whose reference is the initial minimum pairwise distance."""
    from scipy.spatial.distance import pdist

    pts = cost_mod.principal_strains(state.strains.reshape(-1, 3))
    d_min = float(pdist(pts).min())
    if d_min <= 0.0:
        raise ConfigError(
            "coincident strain points at initialisation; the minimum-distance "
            "cost needs a noisy starting field"
        )
    return cost_mod.CostContext(
        A_eqb_init=np.array(state.A_eqb),
        log_det_init=cost_mod.log_det_spd(state.A_eqb),
        kappa_p_init=d_min,
        p=state.problem.p,
    )
