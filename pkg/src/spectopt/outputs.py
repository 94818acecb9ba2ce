"""File artifacts: density images (PGM), field dumps (CSV), histories, JSON.

All outputs are self describing: CSV files carry header rows and PGM images
carry a comment line with the producing configuration hash. Floating-point
values are written with 17 significant digits so reruns are bit identical.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .mesh import StructuredMesh
from .optimizer import IterationRecord


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_pgm(path: str | Path, field: np.ndarray, mesh: StructuredMesh, comment: str = "") -> None:
    """ASCII PGM of a density field: material is black, void is white.

    Greys map linearly; image rows run from the top of the domain downwards
    so the picture matches the physical orientation.
    """
    grid = mesh.element_grid(np.asarray(field, dtype=float))
    pixels = np.rint(255.0 * (1.0 - grid[::-1, :])).astype(int)
    pixels = np.clip(pixels, 0, 255)
    lines = ["P2"]
    if comment:
        lines.append(f"# {comment}")
    lines.append(f"{mesh.nx} {mesh.ny}")
    lines.append("255")
    lines.extend(" ".join(str(v) for v in row) for row in pixels)
    Path(path).write_text("\n".join(lines) + "\n")


def read_pgm(path: str | Path) -> np.ndarray:
    """Density field from an ASCII PGM written by :func:`write_pgm`."""
    tokens: list[str] = []
    for line in Path(path).read_text().splitlines():
        body = line.split("#", 1)[0].strip()
        if body:
            tokens.extend(body.split())
    if not tokens or tokens[0] != "P2":
        raise ConfigError(f"{path}: not an ASCII PGM (P2) file")
    try:
        nx, ny, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
        pixels = np.array([int(t) for t in tokens[4:]], dtype=float)
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"{path}: malformed PGM: {exc}") from exc
    if pixels.size != nx * ny:
        raise ConfigError(f"{path}: expected {nx * ny} pixels, found {pixels.size}")
    grid = 1.0 - pixels.reshape(ny, nx) / maxval
    return grid[::-1, :].ravel()


def write_field_csv(path: str | Path, field: np.ndarray, comment: str = "") -> None:
    """Per-element field dump, row-major element order."""
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["element", "value"])
        for i, v in enumerate(np.asarray(field, dtype=float)):
            writer.writerow([i, _fmt(v)])


def read_field_csv(path: str | Path) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                continue
            rows.append(line)
    reader = csv.DictReader(rows)
    if reader.fieldnames is None or "value" not in reader.fieldnames:
        raise ConfigError(f"{path}: expected a CSV with a 'value' column")
    try:
        return np.array([float(r["value"]) for r in reader])
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"{path}: malformed field CSV: {exc}") from exc


def load_topology(path: str | Path, mesh: StructuredMesh) -> np.ndarray:
    """Load a density field from PGM or CSV and check it fits the mesh."""
    path = Path(path)
    field = read_pgm(path) if path.suffix.lower() == ".pgm" else read_field_csv(path)
    if field.size != mesh.n_elements:
        raise ConfigError(
            f"{path}: topology has {field.size} elements, mesh needs {mesh.n_elements}"
        )
    if field.min() < -1e-9 or field.max() > 1.0 + 1e-9:
        raise ConfigError(f"{path}: densities must lie in [0, 1]")
    return np.clip(field, 0.0, 1.0)


_HISTORY_COLUMNS = (
    "loop",
    "iteration",
    "psi",
    "cost",
    "cost_unnormalised",
    "volume",
    "grey_index",
    "max_change",
    "kappa2",
)
_ROBUST_COLUMNS = (
    "cost_eroded",
    "cost_intermediate",
    "cost_dilated",
    "active_branch",
    "volume_dilated",
    "dilated_target",
)


def write_history_csv(path: str | Path, history: list[IterationRecord], comment: str = "") -> None:
    robust = any(r.branch_costs is not None for r in history)
    cols = _HISTORY_COLUMNS + (_ROBUST_COLUMNS if robust else ())
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(cols)
        for r in history:
            row = [
                r.loop,
                r.iteration,
                _fmt(r.psi),
                _fmt(r.cost),
                _fmt(r.cost_unnormalised),
                _fmt(r.volume),
                _fmt(r.grey_index),
                _fmt(r.max_change),
                _fmt(r.kappa2),
            ]
            if robust:
                bc = r.branch_costs or {}
                row += [
                    _fmt(bc.get("eroded", float("nan"))),
                    _fmt(bc.get("intermediate", float("nan"))),
                    _fmt(bc.get("dilated", float("nan"))),
                    r.active_branch or "",
                    _fmt(r.volume_dilated if r.volume_dilated is not None else float("nan")),
                    _fmt(r.dilated_target if r.dilated_target is not None else float("nan")),
                ]
            writer.writerow(row)


def write_rows_csv(path: str | Path, rows: list[dict], columns: list[str], comment: str = "") -> None:
    """Generic report table with a fixed column order."""
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) if isinstance(row.get(c), (int, float, np.floating, np.integer)) else row.get(c, "") for c in columns])


def write_json(path: str | Path, payload: dict) -> None:
    def default(obj):
        if isinstance(obj, (np.integer,)):
            return int(obj)
        if isinstance(obj, (np.floating,)):
            return float(obj)
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        raise TypeError(f"not JSON serialisable: {type(obj)}")

    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=default) + "\n")
