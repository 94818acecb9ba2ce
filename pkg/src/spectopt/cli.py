"""Command-line entry point.

Subcommands::

    spectopt optimize      --config run.cfg [--seed N] [--out DIR]
    spectopt identify      --config run.cfg ...
    spectopt sweep         --config run.cfg ...
    spectopt gallery       --config run.cfg ...
    spectopt weights-study --config run.cfg ...
    spectopt grad-check    --config run.cfg ...

Exit codes: 0 success, 1 run error, 2 configuration error. The environment
variable ``SPECTOPT_THREADS`` caps the worker threads of the robust
triple-solve and the sweeps. Every report writes plot-ready CSV plus a
rendered PNG figure.
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import outputs, plots
from .config import RunConfig, load_config
from .cost import two_norm_cond, unnormalised_det_cost
from .equilibrium import assemble_A_glob, build_weighted_system
from .errors import ConfigError, SpectoptError
from .filtering import hard_threshold
from .identification import (
    NoiseModel,
    default_gamma_f,
    identify,
    reference_topology,
    sweep,
    synthesize,
)
from .material import StiffnessVector, orthotropic_stiffness, params_from_descriptors
from .mesh import gauss_strains
from .optimizer import initialize, optimize
from .outputs import load_topology
from .pipeline import forward_evaluate
from .sensitivity import total_design_gradient
from .studies import weights_study


def _resolve_topology(cfg: RunConfig, mesh, spec_str: str) -> np.ndarray:
    if spec_str.startswith("reference:"):
        n_holes = int(spec_str.split(":", 1)[1])
        v_m = cfg.get_float("identification", "volume_fraction", None)
        if v_m is None:
            v_m = cfg.get_float("sweep", "volume_fraction", 0.9)
        return reference_topology(n_holes, v_m, mesh)
    path = Path(spec_str)
    return load_topology(path if path.is_absolute() else cfg.path.parent / path, mesh)


def cmd_optimize(cfg: RunConfig, out: Path, seed: int | None) -> int:
    problem = cfg.design_problem()
    opt_cfg = cfg.optimizer_config(seed_override=seed)
    init_field = None
    if opt_cfg.init_mode == "file":
        init_path = cfg.get_str("optimizer", "init_file", required=True)
        full = load_topology(cfg.path.parent / init_path, problem.mesh)
        init_field = full[problem.filter_ctx.design_indices]
    t0 = time.perf_counter()
    result = optimize(opt_cfg, problem, init_field=init_field)
    wall = time.perf_counter() - t0
    mesh = problem.mesh
    tag = f"config {cfg.sha}"

    outputs.write_history_csv(out / "history.csv", result.history, comment=tag)
    for loop, psi, snap in result.snapshots:
        outputs.write_pgm(out / f"loop_{loop:02d}.pgm", snap, mesh, comment=f"{tag} loop {loop} psi {psi:g}")
        outputs.write_field_csv(out / f"loop_{loop:02d}.csv", snap, comment=f"{tag} loop {loop}")
    outputs.write_pgm(out / "density.pgm", result.triple.physical, mesh, comment=tag)
    outputs.write_field_csv(out / "density.csv", result.triple.physical, comment=tag)
    outputs.write_pgm(out / "topology.pgm", result.binary, mesh, comment=f"{tag} hard threshold")
    outputs.write_field_csv(out / "topology.csv", result.binary, comment=f"{tag} hard threshold")
    if result.branch_triples:
        for name, triple in result.branch_triples.items():
            outputs.write_pgm(out / f"density_{name}.pgm", triple.physical, mesh, comment=f"{tag} {name}")
    summary = dict(result.final)
    summary.update(config_sha=cfg.sha, wall_time_seconds=wall, seed=opt_cfg.seed, robust=opt_cfg.robust)
    outputs.write_json(out / "summary.json", summary)
    plots.save_history_figure(out / "history.png", result.history, title="optimisation history")
    plots.save_density_figure(out / "topology.png", result.binary, mesh, title="optimised topology")
    print(
        f"optimize: cost={result.final['cost']:.4g} grey={result.final['grey_index'] * 100:.3f}% "
        f"kappa2={result.final['kappa2']:.4g} wall={wall:.1f}s -> {out}"
    )
    return 0


def cmd_identify(cfg: RunConfig, out: Path, seed: int | None) -> int:
    mesh = cfg.mesh()
    boundary = cfg.boundary(mesh)
    theta = cfg.theta()
    topo_spec = cfg.get_str("identification", "topology", "reference:2")
    topology = _resolve_topology(cfg, mesh, topo_spec)
    gamma_raw = cfg.get_str("identification", "gamma_f", "auto")
    gamma_f = default_gamma_f(boundary, mesh.Ly) if gamma_raw == "auto" else float(gamma_raw)
    n_seeds = cfg.get_int("identification", "seeds", 20)
    base_seed = 0 if seed is None else seed

    rows = []
    report = None
    for s in range(n_seeds):
        data = synthesize(topology, theta, mesh, boundary, NoiseModel(gamma_f, seed=base_seed + s))
        report = identify(data, topology, mesh, boundary)
        row = {
            "seed": base_seed + s,
            "relative_error": report.relative_error,
            "cost_unnormalised": report.cost_unnormalised,
            "kappa2": report.kappa2,
        }
        for name, value in zip(("D11", "D12", "D16", "D22", "D26", "D66"), report.theta):
            row[f"theta_{name}"] = value
        rows.append(row)
    cols = list(rows[0].keys())
    outputs.write_rows_csv(out / "identify.csv", rows, cols, comment=f"config {cfg.sha} gamma_f {gamma_f:g}")
    errs = [r["relative_error"] for r in rows]
    summary = {
        "config_sha": cfg.sha,
        "gamma_f": gamma_f,
        "seeds": n_seeds,
        "median_relative_error": float(np.median(errs)),
        "q1_relative_error": float(np.percentile(errs, 25)),
        "q3_relative_error": float(np.percentile(errs, 75)),
        "kappa2": rows[-1]["kappa2"],
        "cost_unnormalised": rows[-1]["cost_unnormalised"],
        "theta_gt": list(theta.components),
    }
    outputs.write_json(out / "identify.json", summary)
    plots.save_identify_figure(out / "identify.png", report, title=f"last seed, gamma_f={gamma_f:g}")
    print(
        f"identify: median error {summary['median_relative_error'] * 100:.3f}% "
        f"over {n_seeds} seeds -> {out}"
    )
    return 0


def _material_grid(cfg: RunConfig, section: str):
    a1 = cfg.get_floats(section, "alpha1_values", [4.0, 8.0, 12.0, 16.0, 20.0])
    a2 = cfg.get_floats(section, "alpha2_values", [0.5, 0.75, 1.0, 1.25, 1.5])
    betas = cfg.get_floats(section, "beta_values", [0.0, 15.0, 30.0, 45.0, 60.0, 75.0, 90.0])
    return [(x, y, b) for x in a1 for y in a2 for b in betas]


def cmd_sweep(cfg: RunConfig, out: Path, seed: int | None) -> int:
    mesh = cfg.mesh()
    topo_specs = (cfg.get_str("sweep", "topologies", "reference:2")).split()
    topologies = {spec: _resolve_topology(cfg, mesh, spec) for spec in topo_specs}
    loads = (cfg.get_str("sweep", "loads", "uniaxial")).split()
    boundaries = {name: cfg.boundary(mesh, name) for name in loads}
    materials = _material_grid(cfg, "sweep")
    n_seeds = cfg.get_int("sweep", "seeds", 20)
    base_seed = 0 if seed is None else seed
    gamma_raw = cfg.get_str("sweep", "gamma_f", "auto")
    gamma_f = None if gamma_raw == "auto" else float(gamma_raw)

    rows = sweep(
        topologies,
        materials,
        mesh,
        boundaries,
        seeds=list(range(base_seed, base_seed + n_seeds)),
        gamma_f=gamma_f,
        nu_xy=cfg.get_float("sweep", "nu_xy", 0.3),
    )
    table = [
        {
            "topology": r.topology,
            "load_case": r.load_case,
            "alpha1": r.alpha1,
            "alpha2": r.alpha2,
            "beta": r.beta,
            "seed": r.seed,
            "cost_unnormalised": r.cost_unnormalised,
            "kappa2": r.kappa2,
            "relative_error": r.relative_error,
            "failed": r.failed,
            "message": r.message,
        }
        for r in rows
    ]
    cols = list(table[0].keys())
    outputs.write_rows_csv(out / "sweep.csv", table, cols, comment=f"config {cfg.sha}")
    n_failed = sum(r.failed for r in rows)
    summary = {"config_sha": cfg.sha, "cells": len(rows), "failed_cells": n_failed}
    outputs.write_json(out / "sweep.json", summary)
    plots.save_sweep_figure(out / "sweep_error.png", rows, "relative_error", title="identification error")
    plots.save_sweep_figure(out / "sweep_cost.png", rows, "cost_unnormalised", title="unnormalised cost")
    print(f"sweep: {len(rows)} cells ({n_failed} flagged) -> {out}")
    return 0


def cmd_gallery(cfg: RunConfig, out: Path, seed: int | None) -> int:
    from .pipeline import DesignProblem

    mesh = cfg.mesh()
    boundary = cfg.boundary(mesh)
    filter_ctx = cfg.filter_ctx(mesh)
    opt_cfg = cfg.optimizer_config(seed_override=seed)
    materials = _material_grid(cfg, "gallery")
    nu_xy = cfg.get_float("gallery", "nu_xy", 0.3)
    rows = []
    entries = []
    for a1, a2, beta in materials:
        tag = f"a1_{a1:g}_a2_{a2:g}_beta_{beta:g}"
        try:
            theta = orthotropic_stiffness(params_from_descriptors(a1, a2, beta, nu_xy))
            problem = DesignProblem(
                mesh=mesh,
                boundary=boundary,
                theta=theta,
                filter_ctx=filter_ctx,
                cost_kind=cfg.get_str("optimizer", "cost", "det"),
                p=cfg.get_int("optimizer", "p", 8),
            )
            result = optimize(opt_cfg, problem)
            outputs.write_pgm(
                out / f"gallery_{tag}.pgm", result.binary, mesh, comment=f"config {cfg.sha} {tag}"
            )
            entries.append(((a1, a2, beta), result.binary))
            rows.append(
                {
                    "alpha1": a1, "alpha2": a2, "beta": beta,
                    "cost": result.final["cost"],
                    "cost_unnormalised": result.final["cost_unnormalised"],
                    "kappa2": result.final["kappa2"],
                    "grey_index": result.final["grey_index"],
                    "failed": False, "message": "",
                }
            )
        except SpectoptError as exc:
            rows.append(
                {
                    "alpha1": a1, "alpha2": a2, "beta": beta,
                    "cost": float("nan"), "cost_unnormalised": float("nan"),
                    "kappa2": float("nan"), "grey_index": float("nan"),
                    "failed": True, "message": str(exc),
                }
            )
    cols = list(rows[0].keys())
    outputs.write_rows_csv(out / "gallery.csv", rows, cols, comment=f"config {cfg.sha}")
    plots.save_gallery_figure(out / "gallery.png", entries, mesh, title="optimised designs")
    n_failed = sum(r["failed"] for r in rows)
    outputs.write_json(out / "gallery.json", {"config_sha": cfg.sha, "cells": len(rows), "failed_cells": n_failed})
    print(f"gallery: {len(rows)} cells ({n_failed} flagged) -> {out}")
    return 0


def cmd_weights_study(cfg: RunConfig, out: Path, seed: int | None) -> int:
    theta = cfg.theta()
    base_nx = cfg.get_int("weights_study", "base_nx", 20)
    base_ny = cfg.get_int("weights_study", "base_ny", 40)
    factors = tuple(cfg.get_ints("weights_study", "factors", [1, 2, 3, 4]))
    hole = cfg.get_float("weights_study", "hole_fraction", 0.10)
    modes_raw = cfg.get_str("weights_study", "modes", "legacy reaction_only consistent")
    mesh = cfg.mesh()
    result = weights_study(
        theta,
        base_nx=base_nx,
        base_ny=base_ny,
        factors=factors,
        Lx=mesh.Lx,
        Ly=mesh.Ly,
        hole_fraction=hole,
        nominal_strain=cfg.nominal_strain(),
        modes=tuple(modes_raw.split()),
    )
    rows = [
        {
            "mode": r.mode,
            "refinement": r.refinement,
            "n_dofs": r.n_dofs,
            **{f"eig{i + 1}": r.eigenvalues[i] for i in range(6)},
            "kappa2": r.kappa2,
            "inv_det": r.inv_det,
            "lambda_r": r.lambda_r,
            "lambda_q": r.lambda_q,
        }
        for r in result.rows
    ]
    outputs.write_rows_csv(out / "weights.csv", rows, list(rows[0].keys()), comment=f"config {cfg.sha}")
    slope_rows = [
        {
            "mode": mode,
            **{f"m{i + 1}": result.slopes[mode][i] for i in range(6)},
            "inv_det_slope": result.inv_det_slopes[mode],
        }
        for mode in result.slopes
    ]
    outputs.write_rows_csv(out / "weights_slopes.csv", slope_rows, list(slope_rows[0].keys()), comment=f"config {cfg.sha}")
    plots.save_weights_study_figure(out / "weights.png", result, title="eigenvalue mesh scaling")
    for mode in result.slopes:
        print(f"weights-study {mode}: slopes {np.round(result.slopes[mode], 3)}")
    return 0


def cmd_grad_check(cfg: RunConfig, out: Path, seed: int | None) -> int:
    from .filtering import make_filter_context
    from .mesh import build_mesh
    from .pipeline import DesignProblem, capture_cost_context, evaluate_cost

    nx = cfg.get_int("gradcheck", "nx", 8)
    ny = cfg.get_int("gradcheck", "ny", 16)
    psi = cfg.get_float("gradcheck", "psi", 2.0)
    step = cfg.get_float("gradcheck", "step", 1e-5)
    threshold = cfg.get_float("gradcheck", "threshold", 1e-5)
    rng_seed = cfg.get_int("gradcheck", "seed", 0) if seed is None else seed
    mesh = build_mesh(nx, ny, cfg.mesh().Lx, cfg.mesh().Ly)
    fctx = make_filter_context(mesh, frame_layers=2)
    problem = DesignProblem(
        mesh=mesh,
        boundary=cfg.boundary(mesh),
        theta=cfg.theta(),
        filter_ctx=fctx,
        cost_kind=cfg.get_str("optimizer", "cost", "det"),
        p=cfg.get_int("optimizer", "p", 8),
    )
    rng = np.random.default_rng(rng_seed)
    rho = np.clip(0.6 + 0.2 * rng.standard_normal(problem.n_design), 0.05, 0.95)
    state0 = forward_evaluate(problem, rho, psi)
    ctx = capture_cost_context(state0)
    rho = np.clip(rho + 0.05 * rng.standard_normal(problem.n_design), 0.05, 0.95)
    state = forward_evaluate(problem, rho, psi)
    grad = total_design_gradient(state, ctx)[fctx.design_indices]
    rows = []
    worst = 0.0
    fd_all = np.zeros_like(grad)
    for i in range(problem.n_design):
        rp, rm = rho.copy(), rho.copy()
        rp[i] += step
        rm[i] -= step
        cp = evaluate_cost(forward_evaluate(problem, rp, psi), ctx)
        cm = evaluate_cost(forward_evaluate(problem, rm, psi), ctx)
        fd_all[i] = (cp - cm) / (2.0 * step)
    floor = 1e-10 * np.abs(fd_all).max()
    for i, element in enumerate(fctx.design_indices):
        rel = abs(grad[i] - fd_all[i]) / max(abs(fd_all[i]), floor)
        worst = max(worst, rel)
        rows.append({"element": int(element), "analytic": grad[i], "fd": fd_all[i], "rel_err": rel})
    outputs.write_rows_csv(
        out / "grad_check.csv", rows, ["element", "analytic", "fd", "rel_err"],
        comment=f"config {cfg.sha} step {step:g}",
    )
    outputs.write_json(out / "grad_check.json", {"max_rel_err": worst, "threshold": threshold, "step": step})
    print(f"grad-check: max rel err {worst:.3e} (threshold {threshold:g})")
    return 0 if worst < threshold else 1


_COMMANDS = {
    "optimize": cmd_optimize,
    "identify": cmd_identify,
    "sweep": cmd_sweep,
    "gallery": cmd_gallery,
    "weights-study": cmd_weights_study,
    "grad-check": cmd_grad_check,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="spectopt",
        description="Specimen topology optimisation for robust stiffness identification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, help="run configuration file")
        cmd.add_argument("--seed", type=int, default=None, help="override the RNG seed")
        cmd.add_argument("--out", default=None, help="override the output directory")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        out = cfg.output_dir(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](cfg, out, args.seed)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except SpectoptError as exc:
        print(f"run error: {exc}", file=sys.stderr)
        if hasattr(exc, "rho_design") and "out" in locals():
            np.savetxt(out / "diagnostic_design.csv", exc.rho_design, header="design density at failure")
            print(f"diagnostic design dump written to {out}/diagnostic_design.csv", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
