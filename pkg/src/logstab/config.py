"""TOML experiment configuration with exhaustive validation.

Layout::

    seed = 20240501
    output = "out"

    [domain]
    dimension = 2
    lengths = [1.0, 1.0]
    grid_points = 63
    dt = 1e-3
    window = [{ edge = "left", interval = [0.0, 1.0] }]

    [schedule]
    m = 5.0
    mu = 1.0
    kappa_reading = "mu1"

    [[experiments]]
    name = "psi"
    problem = "WAVE_POTENTIAL"
    K = 16
    taus = [2.0]
    noise_levels = [1e-2, 1e-3, 1e-4]
    family = { kind = "scaled_bump", alphas = [0.2, 0.1], heldout_alphas = [0.15] }

Every violated constraint is collected before anything is reported.
"""
from __future__ import annotations

import math
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .domain import DomainSpec, domain_violations
from .errors import ConfigurationError
from .schedule import KAPPA_READINGS
from .stability import PROBLEMS
from .traces import TimeSignal

TOP_KEYS = {"seed", "output", "domain", "schedule", "experiments"}
DOMAIN_KEYS = {"dimension", "lengths", "grid_points", "dt", "window"}
SCHEDULE_KEYS = {"m", "mu", "kappa_reading"}
EXPERIMENT_KEYS = {"name", "problem", "K", "taus", "noise_levels", "family", "q0", "g", "heldout_factor"}
FAMILY_KINDS = {
    "scaled_bump": {"kind", "alphas", "heldout_alphas", "center", "radius"},
    "random_bumps": {"kind", "count", "heldout_count", "amplitude"},
    "modes": {"kind", "coefficients", "heldout_coefficients"},
}
SIGNAL_KINDS = {
    "constant": {"kind", "value"},
    "cosine": {"kind", "amplitude", "frequency", "phase"},
    "polynomial": {"kind", "coefficients"},
    "exponential": {"kind", "amplitude", "rate"},
    "sine": {"kind", "amplitude", "frequency"},
}


class ConfigValidationError(ConfigurationError):
    """Configuration rejected; ``errors`` lists every violation."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


@dataclass(frozen=True)
class SignalSpec:
    """Closed-form time profile ``g``."""

    kind: str = "constant"
    params: tuple = ()

    def _p(self):
        return dict(self.params)

    def g0(self) -> float:
        p = self._p()
        if self.kind == "constant":
            return float(p.get("value", 1.0))
        if self.kind == "cosine":
            return float(p.get("amplitude", 1.0)) * math.cos(float(p.get("phase", 0.0)))
        if self.kind == "polynomial":
            return float(p.get("coefficients", [1.0])[0])
        if self.kind == "exponential":
            return float(p.get("amplitude", 1.0))
        return 0.0

    def __call__(self, t):
        p = self._p()
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return np.full_like(t, float(p.get("value", 1.0)))
        if self.kind == "cosine":
            return float(p.get("amplitude", 1.0)) * np.cos(float(p.get("frequency", 1.0)) * t + float(p.get("phase", 0.0)))
        if self.kind == "polynomial":
            return np.polynomial.polynomial.polyval(t, [float(c) for c in p.get("coefficients", [1.0])])
        if self.kind == "exponential":
            return float(p.get("amplitude", 1.0)) * np.exp(float(p.get("rate", 0.0)) * t)
        return float(p.get("amplitude", 1.0)) * np.sin(float(p.get("frequency", 1.0)) * t)

    def signal(self, spec: DomainSpec) -> TimeSignal:
        return TimeSignal.from_function(spec, self)


@dataclass(frozen=True)
class FamilySpec:
    kind: str
    params: tuple

    def get(self, key, default=None):
        return dict(self.params).get(key, default)


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    problem: str
    K: int
    taus: tuple | None
    noise_levels: tuple
    family: FamilySpec
    q0: float = 0.0
    g: SignalSpec = SignalSpec()
    heldout_factor: float = 2.0


@dataclass(frozen=True)
class ExperimentConfig:
    dimension: int
    lengths: tuple
    grid_points: int
    dt: float
    window: tuple
    m: float
    mu: float
    kappa_reading: str
    experiments: tuple
    seed: int = 0
    output: str = "out"
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    def spec(self, tau: float) -> DomainSpec:
        return DomainSpec(self.dimension, self.lengths, self.grid_points, self.window, tau, self.dt)

    def horizons(self, exp: ExperimentSpec) -> list:
        if exp.taus is not None:
            return list(exp.taus)
        diam = math.sqrt(sum(L * L for L in self.lengths))
        return [2.0 * diam, 4.0 * diam, 8.0 * diam]

    def with_seed(self, seed: int) -> "ExperimentConfig":
        from dataclasses import replace
        return replace(self, seed=int(seed))


def _freeze(v):
    if isinstance(v, list):
        return tuple(_freeze(x) for x in v)
    if isinstance(v, dict):
        return tuple(sorted((k, _freeze(x)) for k, x in v.items()))
    return v


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


class _Collector:
    def __init__(self, strict: bool):
        self.strict = strict
        self.errors: list = []

    def unknown(self, where: str, given, allowed):
        extra = sorted(set(given) - set(allowed))
        for k in extra:
            msg = f"{where}: unknown key {k!r}"
            if self.strict:
                self.errors.append(msg)
            else:
                warnings.warn(msg + " (ignored)", stacklevel=4)

    def add(self, msg: str):
        self.errors.append(msg)


def _num(c: _Collector, where: str, v, positive=False, nonneg=False, integer=False):
    if integer:
        if not isinstance(v, int) or isinstance(v, bool):
            c.add(f"{where}: must be an integer, got {v!r}")
            return None
    elif not _is_num(v):
        c.add(f"{where}: must be a finite number, got {v!r}")
        return None
    if positive and not v > 0:
        c.add(f"{where}: must be > 0, got {v!r}")
        return None
    if nonneg and not v >= 0:
        c.add(f"{where}: must be >= 0, got {v!r}")
        return None
    return v


def _validate_family(c: _Collector, where: str, fam, K):
    if not isinstance(fam, dict):
        c.add(f"{where}: must be a table")
        return None
    kind = fam.get("kind")
    if kind not in FAMILY_KINDS:
        c.add(f"{where}.kind: expected one of {sorted(FAMILY_KINDS)}, got {kind!r}")
        return None
    c.unknown(where, fam, FAMILY_KINDS[kind])
    if kind == "scaled_bump":
        alphas = fam.get("alphas", [])
        if not isinstance(alphas, list) or not alphas:
            c.add(f"{where}.alphas: family empty")
        elif not all(_is_num(a) for a in alphas):
            c.add(f"{where}.alphas: entries must be numbers")
        ho = fam.get("heldout_alphas", [])
        if not isinstance(ho, list) or not all(_is_num(a) for a in ho):
            c.add(f"{where}.heldout_alphas: must be a list of numbers")
        if "radius" in fam:
            _num(c, f"{where}.radius", fam["radius"], positive=True)
    elif kind == "random_bumps":
        count = _num(c, f"{where}.count", fam.get("count", 0), integer=True)
        if count is not None and count < 1:
            c.add(f"{where}.count: family empty")
        _num(c, f"{where}.heldout_count", fam.get("heldout_count", 0), integer=True, nonneg=True)
        _num(c, f"{where}.amplitude", fam.get("amplitude", 0.1), nonneg=True)
    else:
        coeffs = fam.get("coefficients", [])
        if not isinstance(coeffs, list) or not coeffs:
            c.add(f"{where}.coefficients: family empty")
        for key in ("coefficients", "heldout_coefficients"):
            for i, row in enumerate(fam.get(key, [])):
                if not isinstance(row, list) or not all(_is_num(x) for x in row):
                    c.add(f"{where}.{key}[{i}]: must be a list of numbers")
                elif isinstance(K, int) and len(row) > K:
                    c.add(f"{where}.{key}[{i}]: {len(row)} coefficients exceed K = {K}")
    return FamilySpec(kind, _freeze(fam))


def _validate_signal(c: _Collector, where: str, g, problem):
    if g is None:
        return SignalSpec()
    if not isinstance(g, dict) or g.get("kind") not in SIGNAL_KINDS:
        c.add(f"{where}.kind: expected one of {sorted(SIGNAL_KINDS)}")
        return None
    c.unknown(where, g, SIGNAL_KINDS[g["kind"]])
    for k, v in g.items():
        if k == "kind":
            continue
        if k == "coefficients":
            if not isinstance(v, list) or not v or not all(_is_num(x) for x in v):
                c.add(f"{where}.coefficients: must be a nonempty list of numbers")
                return None
        elif not _is_num(v):
            c.add(f"{where}.{k}: must be a finite number, got {v!r}")
            return None
    sig = SignalSpec(g["kind"], _freeze({k: v for k, v in g.items() if k != "kind"}))
    if problem in ("WAVE_SOURCE", "HEAT_SOURCE") and abs(sig.g0()) < 1e-12:
        c.add(f"{where}: the source profile must satisfy g(0) ≠ 0 (got g(0) = {sig.g0()!r})")
    return sig


def validate_config(data: dict, strict: bool = True) -> ExperimentConfig:
    """Turn a parsed TOML document into an :class:`ExperimentConfig` or raise with every error."""
    c = _Collector(strict)
    c.unknown("config", data, TOP_KEYS)
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        c.add(f"seed: must be an integer in [0, 2^64), got {seed!r}")
    output = data.get("output", "out")
    if not isinstance(output, str):
        c.add("output: must be a string")

    dom = data.get("domain")
    if not isinstance(dom, dict):
        c.add("domain: missing table")
        dom = {}
    c.unknown("domain", dom, DOMAIN_KEYS)
    n = dom.get("dimension")
    lengths = dom.get("lengths")
    Ng = dom.get("grid_points")
    dt = dom.get("dt", 1e-3)
    window_raw = dom.get("window", [])
    shape_ok = True
    if n not in (1, 2) or isinstance(n, bool):
        c.add(f"domain.dimension: must be 1 or 2, got {n!r}")
        shape_ok = False
    if not isinstance(lengths, list) or not all(_is_num(x) for x in lengths):
        c.add("domain.lengths: must be a list of numbers")
        shape_ok = False
    if not isinstance(Ng, int) or isinstance(Ng, bool):
        c.add(f"domain.grid_points: must be an integer, got {Ng!r}")
        shape_ok = False
    if not _is_num(dt):
        c.add(f"domain.dt: must be a finite number, got {dt!r}")
        shape_ok = False
    window = []
    if not isinstance(window_raw, list):
        c.add("domain.window: must be a list of {edge, interval} tables")
        shape_ok = False
    else:
        for i, w in enumerate(window_raw):
            if not isinstance(w, dict) or "edge" not in w:
                c.add(f"domain.window[{i}]: needs an 'edge' entry")
                shape_ok = False
                continue
            c.unknown(f"domain.window[{i}]", w, {"edge", "interval"})
            iv = w.get("interval")
            if iv is None and isinstance(lengths, list) and n in (1, 2):
                iv = [0.0, 1.0] if n == 1 else [0.0, float(lengths[1] if w["edge"] in ("left", "right") else lengths[0])]
            if not isinstance(iv, list) or len(iv) != 2 or not all(_is_num(x) for x in iv):
                c.add(f"domain.window[{i}].interval: must be [a, b]")
                shape_ok = False
                continue
            window.append((str(w["edge"]), (float(iv[0]), float(iv[1]))))

    sch = data.get("schedule", {})
    if not isinstance(sch, dict):
        c.add("schedule: must be a table")
        sch = {}
    c.unknown("schedule", sch, SCHEDULE_KEYS)
    m = _num(c, "schedule.m", sch.get("m", 1.0), positive=True)
    mu = _num(c, "schedule.mu", sch.get("mu", 1.0), positive=True)
    kr = sch.get("kappa_reading", "mu1")
    if kr not in KAPPA_READINGS:
        c.add(f"schedule.kappa_reading: expected one of {KAPPA_READINGS}, got {kr!r}")

    exps_raw = data.get("experiments", [])
    if not isinstance(exps_raw, list) or not exps_raw:
        c.add("experiments: at least one [[experiments]] table is required")
        exps_raw = []
    exps = []
    names = set()
    for i, e in enumerate(exps_raw):
        where = f"experiments[{i}]"
        if not isinstance(e, dict):
            c.add(f"{where}: must be a table")
            continue
        c.unknown(where, e, EXPERIMENT_KEYS)
        name = e.get("name", f"exp{i + 1}")
        if not isinstance(name, str) or not name or any(ch in name for ch in "/\\ "):
            c.add(f"{where}.name: must be a nonempty string without spaces or slashes")
        elif name in names:
            c.add(f"{where}.name: duplicate name {name!r}")
        names.add(name)
        where = f"experiments[{name}]" if isinstance(name, str) else where
        problem = e.get("problem")
        if problem not in PROBLEMS:
            c.add(f"{where}.problem: expected one of {PROBLEMS}, got {problem!r}")
        K = _num(c, f"{where}.K", e.get("K", 8), integer=True)
        if K is not None and shape_ok and n in (1, 2):
            total = Ng**n
            if not 1 <= K <= total:
                c.add(f"{where}.K: must lie in 1..{total}, got {K}")
        taus = e.get("taus")
        if taus is not None:
            if not isinstance(taus, list) or not taus or not all(_is_num(t) for t in taus):
                c.add(f"{where}.taus: must be a nonempty list of numbers")
                taus = None
            else:
                taus = tuple(float(t) for t in taus)
        levels = e.get("noise_levels", [0.0])
        if not isinstance(levels, list) or not levels:
            c.add(f"{where}.noise_levels: must be a nonempty list")
            levels = []
        for j, lv in enumerate(levels):
            _num(c, f"{where}.noise_levels[{j}]", lv, nonneg=True)
        fam = _validate_family(c, f"{where}.family", e.get("family"), K)
        q0 = e.get("q0", 0.0)
        if _num(c, f"{where}.q0", q0) is not None:
            if q0 < 0:
                c.add(f"{where}.q0: background must satisfy q0 >= 0, got {q0!r}")
            elif m is not None and q0 > m:
                c.add(f"{where}.q0: |q0| <= m = {m!r} violated")
        g = _validate_signal(c, f"{where}.g", e.get("g"), problem)
        hf = _num(c, f"{where}.heldout_factor", e.get("heldout_factor", 2.0), positive=True)
        # every horizon must give a valid domain (window, cfl, ...)
        if shape_ok:
            diam = math.sqrt(sum(float(L) ** 2 for L in lengths))
            for tau in taus if taus is not None else (2 * diam, 4 * diam, 8 * diam):
                for msg in domain_violations(n, tuple(float(L) for L in lengths), Ng, tuple(window), tau, dt):
                    c.add(f"{where} (tau = {tau!r}): {msg}")
        if fam is not None and g is not None and hf is not None:
            exps.append(ExperimentSpec(name, problem, K, taus, tuple(float(v) for v in levels if _is_num(v)),
                                       fam, float(q0) if _is_num(q0) else 0.0, g, float(hf)))
    if not exps_raw and shape_ok:
        for msg in domain_violations(n, tuple(float(L) for L in lengths), Ng, tuple(window), 1.0, dt):
            c.add(f"domain: {msg}")
    # de-duplicate identical messages (the same cfl violation for several horizons stays distinct)
    errors = list(dict.fromkeys(c.errors))
    if errors:
        raise ConfigValidationError(errors)
    return ExperimentConfig(n, tuple(float(L) for L in lengths), Ng, float(dt), tuple(window), float(m), float(mu),
                            kr, tuple(exps), int(seed), output, data)


def load_config(path: str | Path, strict: bool = True) -> ExperimentConfig:
    """Parse and validate a TOML experiment file."""
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigValidationError([f"config: file {str(path)!r} not found"]) from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigValidationError([f"config: TOML syntax error: {exc}"]) from None
    return validate_config(data, strict)
