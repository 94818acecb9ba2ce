"""Scripted studies: mesh-convergence of the weighting scheme, benchmarks.

The weights study tracks the eigenvalues of the identification normal matrix
over a family of nested mesh refinements of a fixed plate-with-hole
geometry, under three weighting modes, and fits their log-log slopes versus
the DOF count.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cost import two_norm_cond, unnormalised_det_cost
from .equilibrium import assemble_A_glob, build_weighted_system, consistent_weights
from .errors import ConfigError
from .material import StiffnessVector
from .mesh import (
    EquilibriumSolver,
    StructuredMesh,
    assemble_stiffness,
    boundary_uniaxial,
    build_mesh,
    gauss_strains,
)

#: Weighting modes of the study: raw, reaction-balanced, fully consistent.
WEIGHT_MODES = ("legacy", "reaction_only", "consistent")


@dataclass(frozen=True)
class WeightsStudyRow:
    mode: str
    refinement: int
    n_dofs: int
    eigenvalues: np.ndarray
    kappa2: float
    inv_det: float
    lambda_r: float
    lambda_q: float


@dataclass(frozen=True)
class WeightsStudyResult:
    rows: list[WeightsStudyRow]
    slopes: dict[str, np.ndarray]
    inv_det_slopes: dict[str, float]

    def mode_rows(self, mode: str) -> list[WeightsStudyRow]:
        return [r for r in self.rows if r.mode == mode]


def nested_hole_plate(
    base_nx: int,
    base_ny: int,
    factor: int,
    Lx: float,
    Ly: float,
    hole_fraction: float = 0.10,
) -> tuple[StructuredMesh, np.ndarray]:
    """Fixed plate-with-hole geometry refined by integer subdivision.

    The circular hole is digitised once on the base grid and every finer
    mesh subdivides those pixels exactly, so refinement changes only the
    discretisation, never the geometry.
    """
    base = build_mesh(base_nx, base_ny, Lx, Ly)
    radius = np.sqrt(hole_fraction * Lx * Ly / np.pi)
    rho = np.ones(base.n_elements)
    d2 = (base.elem_centers[:, 0] - Lx / 2) ** 2 + (base.elem_centers[:, 1] - Ly / 2) ** 2
    rho[d2 < radius**2] = 0.0
    grid = base.element_grid(rho)
    mesh = build_mesh(base_nx * factor, base_ny * factor, Lx, Ly)
    fine = np.repeat(np.repeat(grid, factor, axis=0), factor, axis=1).ravel()
    return mesh, fine


def weights_study(
    theta: StiffnessVector,
    base_nx: int = 20,
    base_ny: int = 40,
    factors: tuple[int, ...] = (1, 2, 3, 4),
    Lx: float = 50.0,
    Ly: float = 100.0,
    hole_fraction: float = 0.10,
    nominal_strain: float = 0.005,
    modes: tuple[str, ...] = WEIGHT_MODES,
) -> WeightsStudyResult:
    """Eigenvalue scaling of the normal matrix across mesh refinements."""
    for mode in modes:
        if mode not in WEIGHT_MODES:
            raise ConfigError(f"unknown weighting mode {mode!r}; use one of {WEIGHT_MODES}")
    if len(factors) < 2:
        raise ConfigError("the weights study needs at least two refinements")
    rows: list[WeightsStudyRow] = []
    cache = {}
    for factor in factors:
        mesh, rho = nested_hole_plate(base_nx, base_ny, factor, Lx, Ly, hole_fraction)
        boundary = boundary_uniaxial(mesh, nominal_strain * Ly)
        K = assemble_stiffness(rho, theta, mesh)
        U = EquilibriumSolver(K, boundary).solve()
        A_glob = assemble_A_glob(rho, gauss_strains(U, mesh), mesh)
        lr_c, lq_c = consistent_weights(boundary)
        cache[factor] = (mesh, boundary, A_glob, lr_c, lq_c)
    for mode in modes:
        for factor in factors:
            mesh, boundary, A_glob, lr_c, lq_c = cache[factor]
            lam_r, lam_q = {
                "legacy": (1.0, 1.0),
                "reaction_only": (lr_c, 1.0),
                "consistent": (lr_c, lq_c),
            }[mode]
            system = build_weighted_system(A_glob, boundary, lambda_r=lam_r, lambda_q=lam_q)
            eig = np.sort(np.linalg.eigvalsh(system.A_eqb))[::-1]
            rows.append(
                WeightsStudyRow(
                    mode=mode,
                    refinement=factor,
                    n_dofs=mesh.n_dofs,
                    eigenvalues=eig,
                    kappa2=two_norm_cond(system.A_eqb),
                    inv_det=unnormalised_det_cost(system.A_eqb),
                    lambda_r=lam_r,
                    lambda_q=lam_q,
                )
            )
    slopes = {}
    inv_det_slopes = {}
    for mode in modes:
        mode_rows = [r for r in rows if r.mode == mode]
        log_n = np.log10([r.n_dofs for r in mode_rows])
        eig_mat = np.log10([r.eigenvalues for r in mode_rows])
        slopes[mode] = np.array(
            [np.polyfit(log_n, eig_mat[:, i], 1)[0] for i in range(eig_mat.shape[1])]
        )
        inv_det_slopes[mode] = float(
            np.polyfit(log_n, np.log10([r.inv_det for r in mode_rows]), 1)[0]
        )
    return WeightsStudyResult(rows=rows, slopes=slopes, inv_det_slopes=inv_det_slopes)
