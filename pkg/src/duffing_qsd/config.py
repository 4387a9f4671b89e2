"""Run configuration: one flat JSON object per experiment.

Every key is scalar or a short list, so configs diff cleanly and can be
overridden one key at a time from the command line.  Defaults are the
chaotic-regime parameters used throughout (q=0.3, Gamma=0.125, omega0=1,
M=1).  Units follow the dimensionless oscillator convention of the
library: the double-well potential is x^4/4 - x^2/2, time is measured in
units where omega0=1 by default, and hbar is a free parameter.
"""

import json
import math
from dataclasses import dataclass, field, fields

from .classical import DuffingParams, PhasePoint
from .errors import ConfigError
from .oscillator_ops import BasisSpec
from .qsd import MODES, UnravelingSpec

STATES = ("coherent", "fock", "cat")
COMPARE_MODES = ("sections", "histories")


@dataclass
class SimConfig:
    """Flat experiment description; see DEFAULTS in the module source."""

    # artifact naming and reproducibility
    name: str = "run"
    seed: int = 0
    # physical parameters
    mass: float = 1.0
    gamma: float = 0.125
    q: float = 0.3
    omega0: float = 1.0
    kT: float = 0.0
    hbar: float = 1.0
    # numerical controls
    dim: int = 32
    dt: float | None = None          # null -> period/1000
    n_points: int = 1000
    skip: int = 200
    ensemble: int = 1
    recenter_threshold: float = 0.1
    tail_tol: float = 1e-4
    # initial condition and unraveling
    start_x: float = 0.5
    start_p: float = 0.5
    mode: str = "zero-temperature-damping"
    state: str = "coherent"
    fock_n: int = 0
    # phase-space grids and histogram comparison
    extent_x: list = field(default_factory=lambda: [-2.0, 2.0])
    extent_p: list = field(default_factory=lambda: [-2.0, 2.0])
    resolution: list = field(default_factory=lambda: [128, 128])
    smooth_sigma: float = 0.0
    # Lyapunov estimation
    n_periods: int = 500
    renorm_periods: float = 1.0
    separation: float = 1e-8
    # histories
    n_times: int = 2
    cells_x: list = field(default_factory=lambda: [-1.0, 1.0])
    cells_p: list = field(default_factory=lambda: [0.0])
    cell_spacing: list | None = None
    cell_weight: float | None = None
    budget: int = 10_000
    # compare
    compare_mode: str = "sections"
    input_a: str = ""
    input_b: str = ""

    def validate(self):
        def bad(key, why):
            raise ConfigError(f"config key '{key}': {why}")

        if (not isinstance(self.name, str) or not self.name
                or any(c in self.name for c in "/\\")
                or self.name in (".", "..")):
            bad("name", f"must be a plain file stem, got {self.name!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            bad("seed", f"must be a nonnegative integer, got {self.seed!r}")
        for key in ("mass", "omega0", "hbar"):
            v = getattr(self, key)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                bad(key, f"must be a positive number, got {v!r}")
        for key in ("gamma", "kT", "smooth_sigma"):
            v = getattr(self, key)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0):
                bad(key, f"must be a nonnegative number, got {v!r}")
        if not (isinstance(self.q, (int, float)) and math.isfinite(self.q)):
            bad("q", f"must be a finite number, got {self.q!r}")
        if not (isinstance(self.dim, int) and self.dim >= 2):
            bad("dim", f"must be an integer >= 2, got {self.dim!r}")
        if self.dt is not None and not (
                isinstance(self.dt, (int, float)) and self.dt > 0):
            bad("dt", f"must be null or a positive number, got {self.dt!r}")
        for key in ("n_points", "ensemble", "n_times", "budget"):
            v = getattr(self, key)
            if not (isinstance(v, int) and v >= 1):
                bad(key, f"must be an integer >= 1, got {v!r}")
        if not (isinstance(self.skip, int) and self.skip >= 0):
            bad("skip", f"must be an integer >= 0, got {self.skip!r}")
        for key in ("recenter_threshold", "tail_tol", "renorm_periods"):
            v = getattr(self, key)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                bad(key, f"must be a positive number, got {v!r}")
        if not (isinstance(self.separation, (int, float))
                and 0.0 < self.separation < 1e-2):
            bad("separation", f"must be in (0, 0.01), got {self.separation!r}")
        if not (isinstance(self.n_periods, int) and self.n_periods >= 2):
            bad("n_periods", f"must be an integer >= 2, got {self.n_periods!r}")
        for key in ("start_x", "start_p"):
            v = getattr(self, key)
            if not (isinstance(v, (int, float)) and math.isfinite(v)):
                bad(key, f"must be a finite number, got {v!r}")
        if self.mode not in MODES:
            bad("mode", f"must be one of {MODES}, got {self.mode!r}")
        if self.state not in STATES:
            bad("state", f"must be one of {STATES}, got {self.state!r}")
        if not (isinstance(self.fock_n, int) and 0 <= self.fock_n < self.dim):
            bad("fock_n", f"must be an integer in [0, dim), got {self.fock_n!r}")
        for key in ("extent_x", "extent_p"):
            v = getattr(self, key)
            if (not isinstance(v, list) or len(v) != 2
                    or not all(isinstance(e, (int, float)) and math.isfinite(e) for e in v)
                    or not v[0] < v[1]):
                bad(key, f"must be [lo, hi] with lo < hi, got {v!r}")
        if (not isinstance(self.resolution, list) or len(self.resolution) != 2
                or not all(isinstance(e, int) and e >= 2 for e in self.resolution)):
            bad("resolution", f"must be [nx, np] integers >= 2, got {self.resolution!r}")
        for key in ("cells_x", "cells_p"):
            v = getattr(self, key)
            if (not isinstance(v, list) or len(v) == 0
                    or not all(isinstance(e, (int, float)) and math.isfinite(e) for e in v)):
                bad(key, f"must be a nonempty list of numbers, got {v!r}")
        if self.cell_spacing is not None:
            v = self.cell_spacing
            if (not isinstance(v, list) or len(v) != 2
                    or not all(isinstance(e, (int, float)) and e > 0 for e in v)):
                bad("cell_spacing", f"must be null or [dq, dp] positive, got {v!r}")
        if self.cell_weight is not None and not (
                isinstance(self.cell_weight, (int, float)) and self.cell_weight > 0):
            bad("cell_weight", f"must be null or positive, got {self.cell_weight!r}")
        if self.compare_mode not in COMPARE_MODES:
            bad("compare_mode",
                f"must be one of {COMPARE_MODES}, got {self.compare_mode!r}")
        for key in ("input_a", "input_b"):
            if not isinstance(getattr(self, key), str):
                bad(key, "must be a path string")
        return self

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, list) else v
        return out

    # ---- module-facing views ----

    def params(self) -> DuffingParams:
        return DuffingParams(mass=self.mass, gamma=self.gamma, q=self.q,
                             omega0=self.omega0, kT=self.kT, hbar=self.hbar)

    def basis(self) -> BasisSpec:
        return BasisSpec(dim=self.dim, hbar=self.hbar, mass=self.mass,
                         omega_ref=self.omega0)

    def unraveling(self) -> UnravelingSpec:
        return UnravelingSpec(mode=self.mode, gamma=self.gamma, kT=self.kT,
                              hbar=self.hbar)

    def start(self) -> PhasePoint:
        return PhasePoint(self.start_x, self.start_p)


DEFAULTS = SimConfig().to_dict()

_KEY_TYPES = {f.name: f.type for f in fields(SimConfig)}


def _coerce(key: str, value):
    """Ints are accepted where floats are expected, never the reverse."""
    if isinstance(value, bool):
        return value
    target = _KEY_TYPES[key]
    if isinstance(value, int) and "float" in str(target):
        return float(value)
    return value


def from_dict(raw: dict) -> SimConfig:
    unknown = sorted(set(raw) - set(DEFAULTS))
    if unknown:
        raise ConfigError(
            f"unknown config key(s) {unknown}; valid keys: {sorted(DEFAULTS)}")
    merged = dict(DEFAULTS)
    merged.update({k: _coerce(k, v) for k, v in raw.items()})
    return SimConfig(**merged).validate()


def load_config(path: str) -> SimConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return from_dict(raw)


def apply_overrides(cfg: SimConfig, pairs: list[str]) -> SimConfig:
    """Apply `key=value` strings; values are parsed as JSON, else kept raw."""
    raw = cfg.to_dict()
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep:
            raise ConfigError(f"override {pair!r} is not of the form key=value")
        if key not in DEFAULTS:
            raise ConfigError(
                f"unknown config key {key!r}; valid keys: {sorted(DEFAULTS)}")
        try:
            raw[key] = json.loads(value)
        except json.JSONDecodeError:
            raw[key] = value
    return from_dict(raw)
