"""Time signals and boundary traces on the measurement window ``Upsilon x (0, tau)``."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .domain import DomainSpec
from .errors import DimensionError


def trapezoid_weights(n_samples: int, dt: float) -> np.ndarray:
    w = np.full(n_samples, dt)
    w[0] = w[-1] = 0.5 * dt
    if n_samples == 1:
        w[0] = 0.0
    return w


def time_derivative(values: np.ndarray, dt: float, axis: int = -1) -> np.ndarray:
    """Centred differences inside, second-order one-sided at both ends."""
    return np.gradient(values, dt, axis=axis, edge_order=2)


@dataclass(frozen=True, eq=False)
class TimeSignal:
    """Uniform samples ``g(t_j)``, ``j = 0..M``, with step ``dt``."""

    samples: np.ndarray
    dt: float

    def __post_init__(self):
        samples = np.array(self.samples, dtype=float).reshape(-1)
        if not np.all(np.isfinite(samples)):
            raise ValueError("signal samples must be finite")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "dt", float(self.dt))

    @classmethod
    def from_function(cls, spec: DomainSpec, fn: Callable) -> "TimeSignal":
        return cls(np.broadcast_to(fn(spec.times), (spec.n_steps + 1,)), spec.time_step)

    @classmethod
    def constant(cls, spec: DomainSpec, value: float = 1.0) -> "TimeSignal":
        return cls(np.full(spec.n_steps + 1, float(value)), spec.time_step)

    @property
    def n_samples(self) -> int:
        return len(self.samples)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_samples)

    @property
    def g0(self) -> float:
        return float(self.samples[0])

    def derivative(self) -> np.ndarray:
        return time_derivative(self.samples, self.dt)

    def derivative_l2_sq(self) -> float:
        """``||g'||^2_{L^2(0, tau)}`` by the trapezoid rule."""
        d = self.derivative()
        return float(np.dot(trapezoid_weights(self.n_samples, self.dt), d * d))

    def matches(self, spec: DomainSpec) -> bool:
        return self.n_samples == spec.n_steps + 1 and math.isclose(self.dt, spec.time_step, rel_tol=1e-12)


@dataclass(frozen=True, eq=False)
class BoundaryTrace:
    """Normal-derivative samples on the window nodes, ``values[p, j]`` at node p, time ``t_j``."""

    spec: DomainSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        expected = (self.spec.n_trace_nodes, self.spec.n_steps + 1)
        if values.shape != expected:
            raise DimensionError(f"trace shape {values.shape} does not match window/time grid {expected}")
        if not np.all(np.isfinite(values)):
            raise ValueError("trace values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, spec: DomainSpec) -> "BoundaryTrace":
        return cls(spec, np.zeros((spec.n_trace_nodes, spec.n_steps + 1)))

    @classmethod
    def from_function(cls, spec: DomainSpec, fn: Callable) -> "BoundaryTrace":
        """Samples ``fn(t)`` on the time grid, identical on every window node."""
        vals = np.asarray(fn(spec.times), dtype=float)[None, :]
        return cls(spec, np.broadcast_to(vals, (spec.n_trace_nodes, spec.n_steps + 1)))

    @property
    def dt(self) -> float:
        return self.spec.time_step

    @property
    def times(self) -> np.ndarray:
        return self.spec.times

    def _check(self, other: "BoundaryTrace"):
        if other.values.shape != self.values.shape or not math.isclose(other.dt, self.dt, rel_tol=1e-12):
            raise DimensionError("traces have different node sets or time grids")

    def __add__(self, other: "BoundaryTrace") -> "BoundaryTrace":
        self._check(other)
        return BoundaryTrace(self.spec, self.values + other.values)

    def __sub__(self, other: "BoundaryTrace") -> "BoundaryTrace":
        self._check(other)
        return BoundaryTrace(self.spec, self.values - other.values)

    def __mul__(self, c: float) -> "BoundaryTrace":
        return BoundaryTrace(self.spec, self.values * float(c))

    __rmul__ = __mul__

    def __neg__(self) -> "BoundaryTrace":
        return BoundaryTrace(self.spec, -self.values)

    def derivative(self) -> "BoundaryTrace":
        return BoundaryTrace(self.spec, time_derivative(self.values, self.dt, axis=1))

    def _sq(self, values: np.ndarray) -> float:
        w_t = trapezoid_weights(values.shape[1], self.dt)
        return float(self.spec.surface_weights @ (values * values) @ w_t)

    def l2(self) -> float:
        """``||v||_{L^2(Lambda)}``."""
        return math.sqrt(self._sq(self.values))

    def h1(self) -> float:
        """``||v||_{H^1((0, tau); L^2(Upsilon))}`` (squared norms of v and dv/dt added)."""
        return math.sqrt(self._sq(self.values) + self._sq(time_derivative(self.values, self.dt, axis=1)))

    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.values * self.values)))

    def to_csv(self, path: str | Path) -> None:
        """Write ``time, node_1, ..., node_P`` rows with round-trip float formatting."""
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["time"] + [f"node_{p + 1}" for p in range(self.values.shape[0])])
            for j, t in enumerate(self.times):
                writer.writerow([repr(float(t))] + [repr(float(v)) for v in self.values[:, j]])

    @classmethod
    def from_csv(cls, spec: DomainSpec, path: str | Path) -> "BoundaryTrace":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if not np.allclose(data[:, 0], spec.times, rtol=0, atol=1e-12 * max(1.0, spec.tau)):
            raise DimensionError("CSV time column does not match the spec time grid")
        return cls(spec, data[:, 1:].T)


def inject_noise(trace: BoundaryTrace, level: float, seed) -> BoundaryTrace:
    """Add seeded zero-mean Gaussian noise with rms ``level * rms(trace)``; level 0 is the identity."""
    if level < 0 or not math.isfinite(level):
        raise ValueError(f"noise level must be finite and >= 0, got {level}")
    if level == 0.0:
        return trace
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(trace.values.shape)
    return BoundaryTrace(trace.spec, trace.values + level * trace.rms() * noise)
