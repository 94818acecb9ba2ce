"""Run-configuration files: flat ``key = value`` pairs in named sections.

The format is INI as understood by :mod:`configparser`, chosen for
diff-ability. Unknown sections or keys, missing required keys and malformed
values all fail fast with the file line attached where one is known.

Grammar (see README for the full key reference)::

    [mesh]
    nx = 60
    ny = 120
    lx = 50.0
    ly = 100.0

    [material]
    # one of three forms:
    e = 200.0          ; nu = 0.3
    # alpha1/alpha2/beta/nu_xy (+ optional e_scale)
    # theta = D11, D12, D16, D22, D26, D66
"""
from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .filtering import FilterContext, make_filter_context
from .material import (
    StiffnessVector,
    isotropic_stiffness,
    orthotropic_stiffness,
    params_from_descriptors,
)
from .mesh import BoundarySetup, StructuredMesh, boundary_biaxial, boundary_uniaxial, build_mesh
from .optimizer import OptimizationConfig
from .pipeline import DesignProblem

_KNOWN_KEYS = {
    "mesh": {"nx", "ny", "lx", "ly"},
    "material": {"e", "nu", "alpha1", "alpha2", "beta", "nu_xy", "e_scale", "theta"},
    "boundary": {"load_case", "nominal_strain"},
    "filter": {"kind", "sbar_fd", "frame_layers"},
    "optimizer": {
        "volume_fraction",
        "psi_max",
        "max_iters_per_loop",
        "density_change_tol",
        "volume_tol",
        "robust",
        "thresholds",
        "phi",
        "cost",
        "p",
        "init",
        "init_sigma",
        "init_file",
        "seed",
        "move_limit",
    },
    "identification": {"gamma_f", "seeds", "topology", "volume_fraction"},
    "sweep": {
        "topologies",
        "loads",
        "volume_fraction",
        "alpha1_values",
        "alpha2_values",
        "beta_values",
        "nu_xy",
        "seeds",
        "gamma_f",
    },
    "weights_study": {
        "base_nx",
        "base_ny",
        "factors",
        "hole_fraction",
        "modes",
    },
    "gallery": {"alpha1_values", "alpha2_values", "beta_values", "nu_xy"},
    "gradcheck": {"nx", "ny", "psi", "step", "threshold", "seed"},
    "output": {"dir"},
}

_REQUIRED = {"mesh": ("nx", "ny", "lx", "ly")}


@dataclass
class RunConfig:
    """Parsed and validated configuration with lazy heavyweight builders."""

    path: Path
    parser: configparser.ConfigParser
    line_map: dict[tuple[str, str], int]
    sha: str
    _mesh: StructuredMesh | None = field(default=None, repr=False)
    _filter_ctx: FilterContext | None = field(default=None, repr=False)

    # -- low-level typed getters ------------------------------------------
    def _where(self, section: str, key: str) -> str:
        line = self.line_map.get((section, key))
        at = f"{self.path.name}:{line}" if line else self.path.name
        return f"[{section}] {key} ({at})"

    def has(self, section: str, key: str) -> bool:
        return self.parser.has_option(section, key)

    def _raw(self, section: str, key: str, default=None, required=False):
        if not self.parser.has_option(section, key):
            if required:
                raise ConfigError(f"missing required key {self._where(section, key)}")
            return default
        return self.parser.get(section, key)

    def get_str(self, section, key, default=None, required=False, choices=None):
        raw = self._raw(section, key, default, required)
        if raw is None:
            return None
        raw = str(raw).strip()
        if choices and raw not in choices:
            raise ConfigError(f"{self._where(section, key)}: expected one of {choices}, got {raw!r}")
        return raw

    def get_int(self, section, key, default=None, required=False):
        raw = self._raw(section, key, default, required)
        if raw is None:
            return None
        try:
            return int(str(raw))
        except ValueError as exc:
            raise ConfigError(f"{self._where(section, key)}: not an integer: {raw!r}") from exc

    def get_float(self, section, key, default=None, required=False):
        raw = self._raw(section, key, default, required)
        if raw is None:
            return None
        try:
            return float(str(raw))
        except ValueError as exc:
            raise ConfigError(f"{self._where(section, key)}: not a number: {raw!r}") from exc

    def get_bool(self, section, key, default=None):
        raw = self._raw(section, key, default)
        if raw is None or isinstance(raw, bool):
            return raw
        lowered = str(raw).strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{self._where(section, key)}: not a boolean: {raw!r}")

    def get_floats(self, section, key, default=None):
        raw = self._raw(section, key, default)
        if raw is None:
            return None
        if isinstance(raw, (list, tuple)):
            return list(raw)
        try:
            return [float(tok) for tok in str(raw).replace(",", " ").split()]
        except ValueError as exc:
            raise ConfigError(f"{self._where(section, key)}: not a number list: {raw!r}") from exc

    def get_ints(self, section, key, default=None):
        vals = self.get_floats(section, key, default)
        if vals is None:
            return None
        out = []
        for v in vals:
            if v != int(v):
                raise ConfigError(f"{self._where(section, key)}: expected integers")
            out.append(int(v))
        return out

    # -- block builders ----------------------------------------------------
    def mesh(self) -> StructuredMesh:
        if self._mesh is None:
            try:
                self._mesh = build_mesh(
                    self.get_int("mesh", "nx", required=True),
                    self.get_int("mesh", "ny", required=True),
                    self.get_float("mesh", "lx", required=True),
                    self.get_float("mesh", "ly", required=True),
                )
            except ConfigError as exc:
                raise ConfigError(f"[mesh] ({self.path.name}): {exc}") from exc
            if min(self._mesh.nx, self._mesh.ny) < 4:
                raise ConfigError(f"[mesh] ({self.path.name}): need at least 4 elements per side")
        return self._mesh

    def theta(self) -> StiffnessVector:
        section = "material"
        if self.has(section, "theta"):
            comps = self.get_floats(section, "theta")
            if len(comps) != 6:
                raise ConfigError(f"{self._where(section, 'theta')}: expected 6 components")
            return StiffnessVector(np.array(comps))
        if self.has(section, "alpha1"):
            params = params_from_descriptors(
                self.get_float(section, "alpha1", required=True),
                self.get_float(section, "alpha2", required=True),
                self.get_float(section, "beta", required=True),
                self.get_float(section, "nu_xy", 0.3),
                self.get_float(section, "e_scale", 200.0),
            )
            return orthotropic_stiffness(params)
        return isotropic_stiffness(
            self.get_float(section, "e", 200.0),
            self.get_float(section, "nu", 0.3),
        )

    def nominal_strain(self) -> float:
        return self.get_float("boundary", "nominal_strain", 0.005)

    def boundary(self, mesh: StructuredMesh, load_case: str | None = None) -> BoundarySetup:
        case = load_case or self.get_str(
            "boundary", "load_case", "uniaxial", choices=("uniaxial", "biaxial")
        )
        u_bar = self.nominal_strain() * mesh.Ly
        if case == "biaxial":
            return boundary_biaxial(mesh, u_bar)
        return boundary_uniaxial(mesh, u_bar)

    def filter_ctx(self, mesh: StructuredMesh) -> FilterContext:
        if self._filter_ctx is None or self._filter_ctx.mesh != mesh:
            layers_raw = self.get_str("filter", "frame_layers", "auto")
            layers = None if layers_raw == "auto" else int(layers_raw)
            self._filter_ctx = make_filter_context(
                mesh,
                kind=self.get_str("filter", "kind", "pde", choices=("pde", "conv")),
                sbar_fd=self.get_float("filter", "sbar_fd", 0.15),
                frame_layers=layers,
            )
        return self._filter_ctx

    def optimizer_config(self, seed_override: int | None = None) -> OptimizationConfig:
        thresholds = self.get_floats("optimizer", "thresholds", [0.25, 0.5, 0.75])
        if len(thresholds) != 3:
            raise ConfigError(f"{self._where('optimizer', 'thresholds')}: expected 3 values")
        seed = self.get_int("optimizer", "seed", 0)
        return OptimizationConfig(
            volume_fraction=self.get_float("optimizer", "volume_fraction", 0.8),
            psi_max=self.get_int("optimizer", "psi_max", 512),
            max_iters_per_loop=self.get_int("optimizer", "max_iters_per_loop", 50),
            density_change_tol=self.get_float("optimizer", "density_change_tol", 1e-4),
            volume_tol=self.get_float("optimizer", "volume_tol", 1e-6),
            robust=bool(self.get_bool("optimizer", "robust", False)),
            thresholds=tuple(thresholds),
            phi=self.get_float("optimizer", "phi", 0.5),
            cost=self.get_str("optimizer", "cost", "det", choices=("det", "kappa_p", "kappa_f", "min_dist")),
            p=self.get_int("optimizer", "p", 8),
            init_mode=self.get_str("optimizer", "init", "even", choices=("even", "noisy", "file")),
            init_sigma=self.get_float("optimizer", "init_sigma", 0.2),
            seed=seed if seed_override is None else seed_override,
            move_limit=self.get_float("optimizer", "move_limit", 0.2),
        )

    def design_problem(self, load_case: str | None = None) -> DesignProblem:
        mesh = self.mesh()
        return DesignProblem(
            mesh=mesh,
            boundary=self.boundary(mesh, load_case),
            theta=self.theta(),
            filter_ctx=self.filter_ctx(mesh),
            cost_kind=self.get_str("optimizer", "cost", "det"),
            p=self.get_int("optimizer", "p", 8),
        )

    def output_dir(self, override: str | None = None) -> Path:
        return Path(override or self.get_str("output", "dir", "out"))


def load_config(path: str | Path) -> RunConfig:
    """Parse and validate a configuration file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"could not parse {path.name}: {exc}") from exc

    line_map: dict[tuple[str, str], int] = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
        elif section and "=" in stripped and not stripped.startswith(("#", ";")):
            key = stripped.split("=", 1)[0].strip().lower()
            line_map.setdefault((section, key), lineno)

    for section_name in parser.sections():
        if section_name not in _KNOWN_KEYS:
            raise ConfigError(f"unknown section [{section_name}] in {path.name}")
        for key in parser[section_name]:
            if key not in _KNOWN_KEYS[section_name]:
                line = line_map.get((section_name, key))
                at = f"{path.name}:{line}" if line else path.name
                raise ConfigError(f"unknown key {key!r} in [{section_name}] ({at})")
    for section_name, keys in _REQUIRED.items():
        if not parser.has_section(section_name):
            raise ConfigError(f"missing required section [{section_name}] in {path.name}")
        for key in keys:
            if not parser.has_option(section_name, key):
                raise ConfigError(f"missing required key {key!r} in [{section_name}] ({path.name})")

    cfg = RunConfig(
        path=path,
        parser=parser,
        line_map=line_map,
        sha=hashlib.sha256(text.encode()).hexdigest()[:12],
    )
    cfg.mesh()
    cfg.theta()
    return cfg
