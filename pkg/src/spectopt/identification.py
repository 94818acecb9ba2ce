"""Synthetic identification benchmarks on given topologies.

Generates noisy Gauss-point strain data from a forward solve, recovers the
six stiffness components through the weighted normal equations, and runs
the material / loading / topology sweeps used to score specimen designs.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .cost import two_norm_cond, unnormalised_det_cost
from .equilibrium import assemble_A_glob, build_weighted_system, consistent_weights
from .errors import ConfigError, DegenerateSystemError, ParameterError, RunError
from .material import StiffnessVector, engineering_constants, params_from_descriptors, orthotropic_stiffness
from .mesh import (
    BoundarySetup,
    EquilibriumSolver,
    StructuredMesh,
    assemble_stiffness,
    gauss_strains,
    reaction_sums,
)

#: Default strain-noise level as a fraction of the nominal applied strain.
NOISE_TO_NOMINAL = 1e-3


@dataclass(frozen=True)
class NoiseModel:
    """I.i.d. Gaussian noise on every strain component at every Gauss point."""

    gamma_f: float
    seed: int = 0

    def __post_init__(self):
        if self.gamma_f < 0:
            raise ParameterError(f"gamma_f must be nonnegative, got {self.gamma_f!r}")


def default_gamma_f(boundary: BoundarySetup, Ly: float) -> float:
    """Noise standard deviation 1e-3 times the nominal applied strain."""
    return NOISE_TO_NOMINAL * boundary.u_bar / Ly


@dataclass(frozen=True)
class SyntheticData:
    """Noisy strains plus noise-free reactions of one synthetic experiment."""

    strains: np.ndarray
    reactions: np.ndarray
    theta_gt: np.ndarray
    noise: NoiseModel


@dataclass(frozen=True)
class IdentificationReport:
    """Recovered stiffness components and their error measures.

    ``component_errors`` are normalised by the ground-truth vector norm so
    they stay defined for components that are exactly zero (no coupling).
    """

    theta: np.ndarray
    theta_gt: np.ndarray
    relative_error: float
    component_errors: np.ndarray
    cost_unnormalised: float
    kappa2: float

    def engineering_errors(self, beta: float) -> dict:
        """Relative errors of the engineering constants in the material frame."""
        ident = engineering_constants(self.theta, beta)
        truth = engineering_constants(self.theta_gt, beta)
        return {k: abs(ident[k] - truth[k]) / abs(truth[k]) for k in ("E_xx", "E_yy", "G_xy")}


def synthesize(
    topology: np.ndarray,
    theta_gt: StiffnessVector,
    mesh: StructuredMesh,
    boundary: BoundarySetup,
    noise: NoiseModel,
) -> SyntheticData:
    """Forward solve plus strain perturbation.

    Reactions come from the unperturbed solution; only the strain field is
    polluted, independently per component and integration point.
    """
    topology = np.asarray(topology, dtype=float)
    K = assemble_stiffness(topology, theta_gt, mesh)
    solver = EquilibriumSolver(K, boundary)
    U = solver.solve()
    strains = gauss_strains(U, mesh)
    reactions = reaction_sums(K, U, boundary)
    if not np.isfinite(strains).all():
        raise RunError("forward solve produced non-finite strains (disconnected topology?)")
    if noise.gamma_f > 0.0:
        rng = np.random.default_rng(noise.seed)
        strains = strains + rng.normal(0.0, noise.gamma_f, strains.shape)
    return SyntheticData(
        strains=strains,
        reactions=reactions,
        theta_gt=np.array(theta_gt.components),
        noise=noise,
    )


def identify(
    data: SyntheticData,
    topology: np.ndarray,
    mesh: StructuredMesh,
    boundary: BoundarySetup,
    lambda_r: float | None = None,
    lambda_q: float | None = None,
) -> IdentificationReport:
    """Least-squares recovery of the six stiffness components.

    All six components are solved for with no symmetry assumption; the
    system is weighted consistently unless explicit weights are given.
    """
    if lambda_r is None or lambda_q is None:
        lr, lq = consistent_weights(boundary)
        lambda_r = lr if lambda_r is None else lambda_r
        lambda_q = lq if lambda_q is None else lambda_q
    A_glob = assemble_A_glob(topology, data.strains, mesh)
    system = build_weighted_system(
        A_glob, boundary, reactions=data.reactions, lambda_r=lambda_r, lambda_q=lambda_q
    )
    try:
        c_factor = scipy.linalg.cho_factor(system.A_eqb)
    except scipy.linalg.LinAlgError as exc:
        raise DegenerateSystemError("identification normal matrix is indefinite") from exc
    theta = scipy.linalg.cho_solve(c_factor, system.b_eqb)
    gt = data.theta_gt
    return IdentificationReport(
        theta=theta,
        theta_gt=gt,
        relative_error=float(np.linalg.norm(theta - gt) / np.linalg.norm(gt)),
        component_errors=np.abs(theta - gt) / np.linalg.norm(gt),
        cost_unnormalised=unnormalised_det_cost(system.A_eqb),
        kappa2=two_norm_cond(system.A_eqb),
    )


#: Hole centres of the manually designed reference topologies, as fractions
#: of the domain size. Quincunx and grids keep mirror symmetry in both axes.
REFERENCE_LAYOUTS = {
    1: [(0.5, 0.5)],
    2: [(0.5, 0.3), (0.5, 0.7)],
    3: [(0.5, 0.25), (0.5, 0.5), (0.5, 0.75)],
    4: [(0.3, 0.3), (0.7, 0.3), (0.3, 0.7), (0.7, 0.7)],
    5: [(0.3, 0.3), (0.7, 0.3), (0.5, 0.5), (0.3, 0.7), (0.7, 0.7)],
    6: [(0.3, 0.25), (0.7, 0.25), (0.3, 0.5), (0.7, 0.5), (0.3, 0.75), (0.7, 0.75)],
}


def disk_void_density(mesh: StructuredMesh, centers, radius: float) -> np.ndarray:
    """Binary density field with circular voids at the given centres (mm)."""
    rho = np.ones(mesh.n_elements)
    for cx, cy in centers:
        d2 = (mesh.elem_centers[:, 0] - cx) ** 2 + (mesh.elem_centers[:, 1] - cy) ** 2
        rho[d2 < radius**2] = 0.0
    return rho


def reference_topology(
    n_holes: int,
    V_m: float,
    mesh: StructuredMesh,
    frame_margin: float | None = None,
    tol: float = 0.005,
) -> np.ndarray:
    """Manually designed benchmark topology with ``n_holes`` circular voids.

    The common hole radius is bisected until the mean density matches the
    volume fraction within ``tol`` (an absolute 0.5% by default). Holes that
    would touch each other or come closer to the boundary than
    ``frame_margin`` (two element layers by default) raise a config error.
    """
    if n_holes not in REFERENCE_LAYOUTS:
        raise ConfigError(f"reference topologies have 1..6 holes, got {n_holes!r}")
    if not 0.0 < V_m <= 1.0:
        raise ConfigError(f"volume fraction must lie in (0, 1], got {V_m!r}")
    centers = [(fx * mesh.Lx, fy * mesh.Ly) for fx, fy in REFERENCE_LAYOUTS[n_holes]]
    if V_m == 1.0:
        return np.ones(mesh.n_elements)
    margin = 2.0 * mesh.L_e if frame_margin is None else frame_margin

    void_area = (1.0 - V_m) * mesh.Lx * mesh.Ly
    lo, hi = 0.0, math.sqrt(void_area / (n_holes * math.pi)) * 1.5
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        rho = disk_void_density(mesh, centers, mid)
        v = float(np.mean(rho))
        if abs(v - V_m) <= tol:
            _check_layout(centers, mid, mesh, margin, n_holes, V_m)
            return rho
        if v > V_m:
            lo = mid
        else:
            hi = mid
    raise ConfigError(
        f"could not realise volume fraction {V_m} with {n_holes} holes on "
        f"a {mesh.nx}x{mesh.ny} grid (mesh too coarse for the 0.5% window)"
    )


def _check_layout(centers, radius, mesh, margin, n_holes, V_m):
    for cx, cy in centers:
        if (
            cx - radius < margin
            or cy - radius < margin
            or cx + radius > mesh.Lx - margin
            or cy + radius > mesh.Ly - margin
        ):
            raise ConfigError(
                f"{n_holes}-hole layout at volume fraction {V_m} collides with the border frame"
            )
    for i in range(len(centers)):
        for j in range(i + 1, len(centers)):
            d = math.hypot(centers[i][0] - centers[j][0], centers[i][1] - centers[j][1])
            if d < 2.0 * radius:
                raise ConfigError(
                    f"{n_holes}-hole layout at volume fraction {V_m} has overlapping holes"
                )


@dataclass(frozen=True)
class SweepCell:
    """One topology/material/load/noise combination of a sweep."""

    topology: str
    load_case: str
    alpha1: float
    alpha2: float
    beta: float
    seed: int
    cost_unnormalised: float
    kappa2: float
    relative_error: float
    component_errors: tuple
    engineering_errors: dict
    failed: bool = False
    message: str = ""


def sweep(
    topologies: dict[str, np.ndarray],
    materials: list[tuple[float, float, float]],
    mesh: StructuredMesh,
    boundaries: dict[str, BoundarySetup],
    seeds: list[int],
    gamma_f: float | None = None,
    nu_xy: float = 0.3,
) -> list[SweepCell]:
    """Cross benchmark of topologies, materials, load cases and noise seeds.

    Each cell derives an independent noise stream from (cell, seed), so the
    result is identical however the loop is scheduled or parallelised.
    Degenerate cells are flagged and the sweep continues.
    """
    rows: list[SweepCell] = []
    for topo_name, topology in topologies.items():
        for load_name, boundary in boundaries.items():
            gf = default_gamma_f(boundary, mesh.Ly) if gamma_f is None else gamma_f
            for a1, a2, beta in materials:
                theta = orthotropic_stiffness(params_from_descriptors(a1, a2, beta, nu_xy))
                try:
                    base = synthesize(topology, theta, mesh, boundary, NoiseModel(0.0))
                except (RunError, DegenerateSystemError) as exc:
                    rows.extend(
                        _failed_cell(topo_name, load_name, a1, a2, beta, s, str(exc))
                        for s in seeds
                    )
                    continue
                cell_key = zlib.crc32(f"{topo_name}/{load_name}".encode())
                for seed in seeds:
                    stream = np.random.default_rng(
                        [seed, cell_key, int(beta), int(a1 * 4), int(a2 * 4)]
                    )
                    noisy = base.strains + stream.normal(0.0, gf, base.strains.shape)
                    data = SyntheticData(
                        strains=noisy,
                        reactions=base.reactions,
                        theta_gt=base.theta_gt,
                        noise=NoiseModel(gf, seed),
                    )
                    try:
                        rep = identify(data, topology, mesh, boundary)
                    except DegenerateSystemError as exc:
                        rows.extend(_failed_cell(topo_name, load_name, a1, a2, beta, seed, str(exc)))
                        continue
                    rows.append(
                        SweepCell(
                            topology=topo_name,
                            load_case=load_name,
                            alpha1=a1,
                            alpha2=a2,
                            beta=beta,
                            seed=seed,
                            cost_unnormalised=rep.cost_unnormalised,
                            kappa2=rep.kappa2,
                            relative_error=rep.relative_error,
                            component_errors=tuple(rep.component_errors),
                            engineering_errors=rep.engineering_errors(beta),
                        )
                    )
    return rows


def _failed_cell(topo, load, a1, a2, beta, seed, message):
    yield SweepCell(
        topology=topo,
        load_case=load,
        alpha1=a1,
        alpha2=a2,
        beta=beta,
        seed=seed,
        cost_unnormalised=float("nan"),
        kappa2=float("nan"),
        relative_error=float("nan"),
        component_errors=(),
        engineering_errors={},
        failed=True,
        message=message,
    )
