"""Constrained optimisation driver: continuation loops, robust mode, history.

The outer loop doubles the projection strength from 1 to its cap; each inner
loop runs moving-asymptote updates until the design stalls or the iteration
cap is hit. Every accepted iterate satisfies the bounds exactly and the
scalar volume equality to the configured tolerance, restored by a bisected
uniform shift after each update.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import sensitivity as sens
from .cost import CostContext, two_norm_cond, unnormalised_det_cost
from .errors import ConfigError, DegenerateSystemError, RunError
from .filtering import (
    DensityTriple,
    continuation_schedule,
    grey_index,
    hard_threshold,
    project,
)
from .mma import MovingAsymptotes
from .pipeline import (
    DesignProblem,
    ForwardState,
    capture_cost_context,
    evaluate_cost,
    evaluate_physical,
    forward_evaluate,
    min_distance_context,
)

#: Environment variable capping worker threads of the robust triple solve.
THREADS_ENV = "SPECTOPT_THREADS"

#: Branch labels of the robust formulation, by projection threshold.
ROBUST_BRANCHES = ("eroded", "intermediate", "dilated")


def thread_cap(default: int = 3) -> int:
    raw = os.environ.get(THREADS_ENV, "")
    try:
        return max(1, int(raw)) if raw else default
    except ValueError:
        return default


@dataclass(frozen=True)
class OptimizationConfig:
    """Knobs of one optimisation run."""

    volume_fraction: float = 0.8
    psi_max: int = 512
    max_iters_per_loop: int = 50
    density_change_tol: float = 1e-4
    volume_tol: float = 1e-6
    robust: bool = False
    thresholds: tuple[float, float, float] = (0.25, 0.5, 0.75)
    phi: float = 0.5
    cost: str = "det"
    p: int = 8
    init_mode: str = "even"
    init_sigma: float = 0.2
    seed: int = 0
    move_limit: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.volume_fraction < 1.0:
            raise ConfigError(f"volume fraction must lie in (0, 1), got {self.volume_fraction!r}")
        lo, mid, hi = self.thresholds
        if not (0.0 < lo < mid < hi < 1.0):
            raise ConfigError("robust thresholds must be strictly increasing in (0, 1)")
        if abs(hi - (1.0 - lo)) > 1e-12:
            raise ConfigError("robust thresholds must satisfy high = 1 - low")
        if self.init_mode not in ("even", "noisy", "file"):
            raise ConfigError(f"init mode must be even|noisy|file, got {self.init_mode!r}")

    def branch_phis(self) -> dict[str, float]:
        """Projection thresholds per robust branch.

        The highest threshold erodes (projects the least material), the
        lowest dilates; volumes are then ordered eroded <= intermediate
        <= dilated by monotonicity of the projection in its threshold.
        """
        lo, mid, hi = self.thresholds
        return {"eroded": hi, "intermediate": mid, "dilated": lo}


@dataclass(frozen=True)
class IterationRecord:
    loop: int
    iteration: int
    psi: float
    cost: float
    cost_unnormalised: float
    volume: float
    grey_index: float
    max_change: float
    kappa2: float
    branch_costs: dict | None = None
    active_branch: str | None = None
    volume_dilated: float | None = None
    dilated_target: float | None = None


@dataclass
class OptimizationResult:
    rho_design: np.ndarray
    triple: DensityTriple
    binary: np.ndarray
    history: list[IterationRecord]
    snapshots: list[tuple[int, float, np.ndarray]]
    cost_context: CostContext
    final: dict
    branch_triples: dict[str, DensityTriple] | None = None


def restore_volume(
    rho: np.ndarray,
    volume_fn,
    target: float,
    tol: float = 1e-6,
    max_iter: int = 200,
) -> np.ndarray:
    """Project a design onto the volume equality by a bisected uniform shift.

    The shifted-and-clipped volume is continuous and nondecreasing in the
    shift, so bisection always lands within ``tol`` of an attainable target.
    """
    rho = np.clip(np.asarray(rho, dtype=float), 0.0, 1.0)
    if abs(volume_fn(rho) - target) <= tol:
        return rho
    lo, hi = -1.0, 1.0
    if volume_fn(np.clip(rho + lo, 0.0, 1.0)) > target:
        raise RunError(f"volume target {target} below the attainable minimum")
    if volume_fn(np.clip(rho + hi, 0.0, 1.0)) < target:
        raise RunError(f"volume target {target} above the attainable maximum")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        shifted = np.clip(rho + mid, 0.0, 1.0)
        v = volume_fn(shifted)
        if abs(v - target) <= tol:
            return shifted
        if v < target:
            lo = mid
        else:
            hi = mid
    raise RunError("volume restoration did not converge")


class MMAStepper:
    """One volume-feasible moving-asymptote update of the design densities.

    The scalar volume equality is handled by projection: the cost gradient
    is projected onto the constraint tangent before the moving-asymptote
    update, and the exact equality is re-established afterwards on the true
    volume function by a bisected uniform shift. Convexifying an equality
    as an inequality pair would freeze the subproblem instead.
    """

    def __init__(
        self,
        n: int,
        target: float,
        volume_fn,
        move: float = 0.2,
        volume_tol: float = 1e-6,
    ):
        self.mma = MovingAsymptotes(n=n, m=1, move=move)
        self.target = target
        self.volume_fn = volume_fn
        self.volume_tol = volume_tol

    def step(
        self,
        rho: np.ndarray,
        cost: float,
        grad: np.ndarray,
        vol: float,
        vol_grad: np.ndarray,
    ) -> np.ndarray:
        """Advance the design and restore the volume equality.

        Monotone cost decrease is not guaranteed per step: the projection
        back onto the volume manifold can trade a little cost away.
        """
        vv = float(vol_grad @ vol_grad)
        tangent = grad if vv == 0.0 else grad - (float(grad @ vol_grad) / vv) * vol_grad
        xnew = self.mma.step(rho, tangent, np.array([-1.0]), np.zeros((1, rho.size)))
        return restore_volume(xnew, self.volume_fn, self.target, tol=self.volume_tol)


def constrained_step(
    rho: np.ndarray,
    cost: float,
    grad: np.ndarray,
    vol: float,
    vol_grad: np.ndarray,
    volume_fn,
    target: float,
    stepper: MMAStepper | None = None,
) -> np.ndarray:
    """Single stateless update; tests and one-off callers."""
    if stepper is None:
        stepper = MMAStepper(rho.size, target, volume_fn)
    return stepper.step(rho, cost, grad, vol, vol_grad)


def initialize(
    config: OptimizationConfig,
    problem: DesignProblem,
    init_field: np.ndarray | None = None,
) -> np.ndarray:
    """Starting design densities satisfying the volume equality at psi = 1.

    Even mode bisects the uniform value; noisy mode perturbs it with clipped
    Gaussian noise and re-restores the volume; file mode restores a loaded
    field.
    """
    ctx = problem.filter_ctx
    phi = config.phi

    def volume_at(rho_design):
        return forward_chain_volume(problem, rho_design, psi=1.0, phi=phi)

    if config.init_mode == "even":
        lo, hi = 0.0, 1.0
        v_lo = volume_at(np.full(ctx.n_design, lo))
        v_hi = volume_at(np.full(ctx.n_design, hi))
        if not v_lo <= config.volume_fraction <= v_hi:
            raise ConfigError(
                f"volume fraction {config.volume_fraction} outside attainable "
                f"range [{v_lo:.4f}, {v_hi:.4f}] (passive frame included)"
            )
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            v = volume_at(np.full(ctx.n_design, mid))
            if abs(v - config.volume_fraction) <= config.volume_tol:
                return np.full(ctx.n_design, mid)
            if v < config.volume_fraction:
                lo = mid
            else:
                hi = mid
        raise ConfigError("even initialisation bisection did not converge")

    if config.init_mode == "noisy":
        even = initialize(replace(config, init_mode="even"), problem)
        rng = np.random.default_rng(config.seed)
        noisy = np.clip(even + rng.normal(0.0, config.init_sigma, ctx.n_design), 0.0, 1.0)
        return restore_volume(noisy, volume_at, config.volume_fraction, tol=config.volume_tol)

    if init_field is None:
        raise ConfigError("init mode 'file' needs a starting density field")
    start = np.clip(np.asarray(init_field, dtype=float), 0.0, 1.0)
    if start.shape != (ctx.n_design,):
        raise ConfigError(
            f"starting field has {start.shape} entries, expected {ctx.n_design}"
        )
    return restore_volume(start, volume_at, config.volume_fraction, tol=config.volume_tol)


def forward_chain_volume(problem, rho_design, psi, phi) -> float:
    """Mean physical density of a design without an equilibrium solve."""
    ctx = problem.filter_ctx
    averaged = ctx.smooth(ctx.full_field(rho_design))
    physical = project(averaged, psi, phi)
    physical[ctx.passive] = 1.0
    return float(np.mean(physical))


@dataclass
class _Evaluation:
    cost: float
    grad: np.ndarray
    vol_constraint: float
    vol_grad: np.ndarray
    record: IterationRecord
    state: ForwardState


class _StandardObjective:
    def __init__(self, problem: DesignProblem, config: OptimizationConfig):
        self.problem = problem
        self.config = config
        self.ctx: CostContext | None = None

    def volume_fn(self, psi):
        return lambda rho: forward_chain_volume(self.problem, rho, psi, self.config.phi)

    def volume_target(self, rho, psi) -> float:
        return self.config.volume_fraction

    def evaluate(self, rho, psi, loop, iteration, max_change) -> _Evaluation:
        state = forward_evaluate(self.problem, rho, psi, self.config.phi)
        if self.ctx is None:
            self.ctx = (
                min_distance_context(state)
                if self.problem.cost_kind == "min_dist"
                else capture_cost_context(state)
            )
        cost = evaluate_cost(state, self.ctx)
        grad = sens.total_design_gradient(state, self.ctx)
        vol = state.volume()
        vol_grad = sens.volume_gradient(state)
        design = self.problem.filter_ctx.design_indices
        record = IterationRecord(
            loop=loop,
            iteration=iteration,
            psi=psi,
            cost=cost,
            cost_unnormalised=unnormalised_det_cost(state.A_eqb),
            volume=vol,
            grey_index=grey_index(state.rho_phys),
            max_change=max_change,
            kappa2=two_norm_cond(state.A_eqb),
        )
        return _Evaluation(cost, grad[design], vol, vol_grad[design], record, state)


class _RobustObjective:
    """Worst case over eroded/intermediate/dilated projections.

    The three forward solves are independent and run on a small thread pool;
    the gradient comes from the active branch only, and the volume equality
    acts on the dilated field with a per-loop rescaled target.
    """

    def __init__(self, problem: DesignProblem, config: OptimizationConfig):
        self.problem = problem
        self.config = config
        self.phis = config.branch_phis()
        self.ctxs: dict[str, CostContext] | None = None
        self.target: float | None = None

    def volume_fn(self, psi):
        phi_dil = self.phis["dilated"]
        return lambda rho: forward_chain_volume(self.problem, rho, psi, phi_dil)

    def volume_target(self, rho, psi) -> float:
        """Dilated-volume target keeping the intermediate field on fraction."""
        v_mid = forward_chain_volume(self.problem, rho, psi, self.phis["intermediate"])
        v_dil = forward_chain_volume(self.problem, rho, psi, self.phis["dilated"])
        if v_mid <= 0.0:
            raise RunError("intermediate projection lost all material")
        self.target = self.config.volume_fraction * v_dil / v_mid
        return self.target

    def _branch_states(self, rho, psi) -> dict[str, ForwardState]:
        fctx = self.problem.filter_ctx
        full = fctx.full_field(rho)
        averaged = fctx.smooth(full)

        def build(name):
            physical = project(averaged, psi, self.phis[name])
            physical[fctx.passive] = 1.0
            triple = DensityTriple(design=full, averaged=averaged, physical=physical)
            return name, evaluate_physical(
                self.problem, triple, psi=psi, phi=self.phis[name]
            )

        with ThreadPoolExecutor(max_workers=min(3, thread_cap())) as pool:
            return dict(pool.map(build, ROBUST_BRANCHES))

    def evaluate(self, rho, psi, loop, iteration, max_change) -> _Evaluation:
        states = self._branch_states(rho, psi)
        if self.ctxs is None:
            self.ctxs = {name: capture_cost_context(states[name]) for name in states}
        costs = {name: evaluate_cost(states[name], self.ctxs[name]) for name in states}
        # Worst branch drives the step; exact ties go to the eroded design,
        # the conservative manufacturing case.
        worst = max(costs.values())
        active = next(name for name in ROBUST_BRANCHES if costs[name] == worst)
        grad = sens.total_design_gradient(states[active], self.ctxs[active])
        vol_dil = states["dilated"].volume()
        vol_grad = sens.volume_gradient(states["dilated"])
        design = self.problem.filter_ctx.design_indices
        mid = states["intermediate"]
        record = IterationRecord(
            loop=loop,
            iteration=iteration,
            psi=psi,
            cost=worst,
            cost_unnormalised=unnormalised_det_cost(mid.A_eqb),
            volume=mid.volume(),
            grey_index=grey_index(mid.rho_phys),
            max_change=max_change,
            kappa2=two_norm_cond(mid.A_eqb),
            branch_costs=costs,
            active_branch=active,
            volume_dilated=vol_dil,
            dilated_target=self.target,
        )
        return _Evaluation(worst, grad[design], vol_dil, vol_grad[design], record, mid)


def robust_objective(problem: DesignProblem, config: OptimizationConfig):
    """Factory for the three-field worst-case objective (exposed for tests)."""
    return _RobustObjective(problem, config)


def optimize(
    config: OptimizationConfig,
    problem: DesignProblem,
    init_field: np.ndarray | None = None,
    progress=None,
) -> OptimizationResult:
    """Run the full continuation optimisation and return design plus history."""
    if config.robust and problem.cost_kind == "min_dist":
        raise ConfigError("the minimum-distance cost is not available in robust mode")
    objective = (
        _RobustObjective(problem, config) if config.robust else _StandardObjective(problem, config)
    )
    schedule = continuation_schedule(config.psi_max)
    rho = initialize(config, problem, init_field=init_field)
    design = problem.filter_ctx.design_indices
    stepper = MMAStepper(
        n=design.size,
        target=config.volume_fraction,
        volume_fn=objective.volume_fn(schedule[0]),
        move=config.move_limit,
        volume_tol=config.volume_tol,
    )
    history: list[IterationRecord] = []
    snapshots: list[tuple[int, float, np.ndarray]] = []
    last_eval = None
    change = 0.0

    for loop_idx, psi in enumerate(schedule, start=1):
        volume_fn = objective.volume_fn(psi)
        target = objective.volume_target(rho, psi)
        stepper.target = target
        stepper.volume_fn = volume_fn
        rho = restore_volume(rho, volume_fn, target, tol=config.volume_tol)
        for it in range(config.max_iters_per_loop):
            try:
                ev = objective.evaluate(rho, psi, loop_idx, it, change)
            except DegenerateSystemError as exc:
                err = RunError(
                    f"degenerate identification system at loop {loop_idx}, iteration {it}: {exc}"
                )
                err.rho_design = rho
                raise err from exc
            history.append(ev.record)
            last_eval = ev
            if progress is not None:
                progress(ev.record)
            rho_new = stepper.step(rho, ev.cost, ev.grad, ev.vol_constraint, ev.vol_grad)
            change = float(np.abs(rho_new - rho).max())
            rho = rho_new
            if change < config.density_change_tol:
                break
        fctx = problem.filter_ctx
        averaged = fctx.smooth(fctx.full_field(rho))
        snap = project(averaged, psi, config.phi)
        snap[fctx.passive] = 1.0
        snapshots.append((loop_idx, psi, snap))

    final_psi = schedule[-1]
    final_eval = objective.evaluate(rho, final_psi, len(schedule), config.max_iters_per_loop, change)
    history.append(final_eval.record)
    triple = final_eval.state.triple
    binary = hard_threshold(triple.physical, problem.filter_ctx.passive)
    ctx = objective.ctx if isinstance(objective, _StandardObjective) else objective.ctxs["intermediate"]
    final = {
        "cost": final_eval.record.cost,
        "cost_unnormalised": final_eval.record.cost_unnormalised,
        "kappa2": final_eval.record.kappa2,
        "grey_index": final_eval.record.grey_index,
        "volume": final_eval.record.volume,
        "loops": len(schedule),
        "evaluations": len(history),
    }
    branch_triples = None
    if config.robust:
        phis = config.branch_phis()
        fctx = problem.filter_ctx
        averaged = fctx.smooth(fctx.full_field(rho))
        branch_triples = {}
        for name, phi_b in phis.items():
            phys = project(averaged, final_psi, phi_b)
            phys[fctx.passive] = 1.0
            branch_triples[name] = DensityTriple(
                design=fctx.full_field(rho), averaged=averaged, physical=phys
            )
    return OptimizationResult(
        rho_design=rho,
        triple=triple,
        binary=binary,
        history=history,
        snapshots=snapshots,
        cost_context=ctx,
        final=final,
        branch_triples=branch_triples,
    )
