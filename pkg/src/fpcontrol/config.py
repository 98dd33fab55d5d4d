"""Experiment configuration: INI parsing, validation, canonical hashing.

A config fully determines an experiment, so its canonical JSON form is
hashed to content-address cached assemblies and solves.
"""

import configparser
import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

SCENARIOS = ("random_init", "point_mass", "custom")
CONTROLLERS = ("none", "riccati", "lyapunov", "riccati_rotated_alpha")

DEFAULT_BOUNDS = (-1.5, 1.5, -1.0, 1.0)


@dataclass
class ExperimentConfig:
    nx1: int = 48
    nx2: int = 32
    bounds: tuple = DEFAULT_BOUNDS
    potential: str = "double_well"
    potential_params: dict = field(default_factory=dict)
    nu: float = 1.0
    scenario: str = "random_init"
    controller: str = "riccati"
    d: int = 4
    delta_override: float = None
    mu_margin: float = 0.01
    t_end: float = 8.0
    tol: float = 1e-8
    seed: int = 0
    n_samples: int = 400
    custom_init: str = None      # path to a density grid CSV, scenario custom
    outdir: str = "runs"

    def validate(self) -> "ExperimentConfig":
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if self.controller not in CONTROLLERS:
            raise ValueError(
                f"controller must be one of {CONTROLLERS}, got {self.controller!r}")
        if self.nx1 < 3 or self.nx2 < 3:
            raise ValueError("grid needs at least 3 nodes per direction")
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if self.d < 2:
            raise ValueError("d must be at least 2")
        if not 1e-10 <= self.tol <= 1e-3:
            raise ValueError("tol must lie in [1e-10, 1e-3]")
        if self.t_end <= 0:
            raise ValueError("t_end must be positive")
        if self.delta_override is not None and self.delta_override <= 0:
            raise ValueError("delta override must be positive")
        if self.scenario == "custom" and not self.custom_init:
            raise ValueError("custom scenario needs custom_init")
        b = self.bounds
        if len(b) != 4 or not (b[0] < b[1] and b[2] < b[3]):
            raise ValueError("bounds must be (x1min, x1max, x2min, x2max) increasing")
        return self

    def canonical(self) -> str:
        """Deterministic JSON of every field that affects results."""
        d = asdict(self)
        d.pop("outdir")
        d["bounds"] = list(self.bounds)
        d["potential_params"] = dict(sorted(self.potential_params.items()))
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    # the system part of the hash ignores simulation-only knobs, so one
    # assembled cache entry serves every scenario on the same operators
    def system_digest(self) -> str:
        d = {
            "nx1": self.nx1, "nx2": self.nx2, "bounds": list(self.bounds),
            "potential": self.potential,
            "potential_params": dict(sorted(self.potential_params.items())),
            "nu": self.nu, "d": self.d, "delta_override": self.delta_override,
            "controller_shape": "lyapunov" if self.controller == "lyapunov" else "riccati",
            "rotated": self.controller == "riccati_rotated_alpha",
        }
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _get(cp, section, key, cast, default):
    if cp.has_option(section, key):
        raw = cp.get(section, key)
        if cast is bool:
            return cp.getboolean(section, key)
        return cast(raw)
    return default


def load_config(path) -> ExperimentConfig:
    """Read an INI experiment file; unknown keys are rejected."""
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise FileNotFoundError(f"config file {path} not found or unreadable")

    known = {
        "grid": {"nx1", "nx2", "x1min", "x1max", "x2min", "x2max"},
        "potential": None,  # free-form: name, nu, plus potential parameters
        "experiment": {"scenario", "controller", "d", "delta", "mu_margin",
                       "t_end", "tol", "seed", "n_samples", "custom_init"},
        "output": {"directory"},
    }
    for section in cp.sections():
        if section not in known:
            raise ValueError(f"unknown config section [{section}]")
        allowed = known[section]
        if allowed is not None:
            extra = set(cp.options(section)) - allowed
            if extra:
                raise ValueError(f"unknown keys in [{section}]: {sorted(extra)}")

    cfg = ExperimentConfig()
    cfg.nx1 = _get(cp, "grid", "nx1", int, cfg.nx1)
    cfg.nx2 = _get(cp, "grid", "nx2", int, cfg.nx2)
    cfg.bounds = (
        _get(cp, "grid", "x1min", float, DEFAULT_BOUNDS[0]),
        _get(cp, "grid", "x1max", float, DEFAULT_BOUNDS[1]),
        _get(cp, "grid", "x2min", float, DEFAULT_BOUNDS[2]),
        _get(cp, "grid", "x2max", float, DEFAULT_BOUNDS[3]),
    )
    if cp.has_section("potential"):
        params = dict(cp.items("potential"))
        cfg.potential = params.pop("name", cfg.potential)
        cfg.nu = float(params.pop("nu", cfg.nu))
        cfg.potential_params = {k: float(v) for k, v in params.items()}
    cfg.scenario = _get(cp, "experiment", "scenario", str, cfg.scenario)
    cfg.controller = _get(cp, "experiment", "controller", str, cfg.controller)
    cfg.d = _get(cp, "experiment", "d", int, cfg.d)
    cfg.delta_override = _get(cp, "experiment", "delta", float, None)
    cfg.mu_margin = _get(cp, "experiment", "mu_margin", float, cfg.mu_margin)
    cfg.t_end = _get(cp, "experiment", "t_end", float, cfg.t_end)
    cfg.tol = _get(cp, "experiment", "tol", float, cfg.tol)
    cfg.seed = _get(cp, "experiment", "seed", int, cfg.seed)
    cfg.n_samples = _get(cp, "experiment", "n_samples", int, cfg.n_samples)
    cfg.custom_init = _get(cp, "experiment", "custom_init", str, None)
    cfg.outdir = _get(cp, "output", "directory", str, cfg.outdir)
    return cfg.validate()


def save_config(cfg: ExperimentConfig, path) -> None:
    cp = configparser.ConfigParser()
    cp["grid"] = {
        "nx1": str(cfg.nx1), "nx2": str(cfg.nx2),
        "x1min": repr(cfg.bounds[0]), "x1max": repr(cfg.bounds[1]),
        "x2min": repr(cfg.bounds[2]), "x2max": repr(cfg.bounds[3]),
    }
    pot = {"name": cfg.potential, "nu": repr(cfg.nu)}
    pot.update({k: repr(v) for k, v in cfg.potential_params.items()})
    cp["potential"] = pot
    exp = {
        "scenario": cfg.scenario, "controller": cfg.controller,
        "d": str(cfg.d), "mu_margin": repr(cfg.mu_margin),
        "t_end": repr(cfg.t_end), "tol": repr(cfg.tol),
        "seed": str(cfg.seed), "n_samples": str(cfg.n_samples),
    }
    if cfg.delta_override is not None:
        exp["delta"] = repr(cfg.delta_override)
    if cfg.custom_init:
        exp["custom_init"] = cfg.custom_init
    cp["experiment"] = exp
    cp["output"] = {"directory": cfg.outdir}
    with open(path, "w") as fh:
        cp.write(fh)


def ensure_outdir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.outdir)
    out.mkdir(parents=True, exist_ok=True)
    return out
