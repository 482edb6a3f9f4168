"""Leapfrog solver for ``u_tt - Delta u + q u = g(t) f`` with Dirichlet data, and its traces.

The stepper is the explicit central scheme

    u^{n+1} = 2 u^n - u^{n-1} + dt^2 (g_n f - A_q u^n),   A_q = -Delta_h + q,

started by the Taylor step ``u^1 = u^0 + dt u_1 + dt^2/2 (g_0 f - A_q u^0)``.
Without forcing it conserves ``||(u^{n+1} - u^n)/dt||^2 + (A_q u^{n+1}, u^n)``
exactly, which is the discrete form of
``||u_t||^2 + ||grad u||^2 + (q u, u)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .domain import (
    DimensionError,
    DomainSpec,
    EigenSystem,
    ScalarField,
    build_laplacian,
    norm,
)
from .errors import ConfigurationError, InstabilityError
from .traces import BoundaryTrace, TimeSignal
from .volterra import causal_convolve


@dataclass(frozen=True, eq=False)
class WaveState:
    displacement: ScalarField
    velocity: ScalarField
    step: int

    @property
    def time(self) -> float:
        return self.step * self.displacement.spec.time_step


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampled states of one run plus the conserved discrete energy at every half step."""

    states: list
    energy: np.ndarray = field(repr=False)

    def __iter__(self) -> Iterator[WaveState]:
        return iter(self.states)

    def __len__(self) -> int:
        return len(self.states)

    def __getitem__(self, i) -> WaveState:
        return self.states[i]

    @property
    def final(self) -> WaveState:
        return self.states[-1]

    def energy_drift(self) -> float:
        """``max |E - E_0| / E_0`` over the run (0 for the zero solution)."""
        e0 = self.energy[0]
        if e0 == 0:
            return float(np.max(np.abs(self.energy)))
        return float(np.max(np.abs(self.energy - e0)) / abs(e0))


@dataclass(frozen=True, eq=False)
class ProbeMeasurement:
    """Difference of the traces produced by the probe ``phi_k`` under q and q0."""

    k: int
    eigenvalue: float
    difference: BoundaryTrace
    data_norm: float
    probe_norm: float
    kind: str = "wave"

    @property
    def ratio(self) -> float:
        return self.data_norm / self.probe_norm


def _check_inputs(spec: DomainSpec, q: ScalarField, fields: Sequence[ScalarField], m: float | None):
    for f in (q, *fields):
        if f.spec != spec:
            raise DimensionError("all fields must live on the grid of spec")
    if m is not None:
        q.check_bound(m, "q")


def leapfrog_traces(spec: DomainSpec, q: ScalarField, U0: np.ndarray, U1: np.ndarray,
                    forcing: np.ndarray | None = None, profiles: np.ndarray | None = None,
                    snapshot_stride: int = 0) -> tuple:
    """Batched leapfrog over the columns of ``U0``, ``U1`` (shape ``(N, B)``).

    ``forcing`` (``(N, B)``) is multiplied by ``profiles`` (``(M+1, B)``) at each
    step.  Returns ``(traces, energy, snapshots)`` with traces shaped
    ``(B, P, M+1)``, energy ``(M, B)`` and snapshots a list of
    ``(step, u, velocity)`` tuples (only when ``snapshot_stride > 0``).
    """
    A = build_laplacian(spec, q).matrix
    Tr = spec.trace_matrix
    dt = spec.time_step
    M = spec.n_steps
    dv = spec.cell_volume
    U0 = np.asarray(U0, dtype=float).reshape(spec.size, -1)
    U1 = np.asarray(U1, dtype=float).reshape(spec.size, -1)
    B = U0.shape[1]
    if forcing is not None:
        forcing = np.asarray(forcing, dtype=float).reshape(spec.size, -1)
        profiles = np.asarray(profiles, dtype=float).reshape(M + 1, -1)
        if profiles.shape[0] != M + 1:
            raise DimensionError("forcing profiles do not match the time grid")

    def force(n):
        return 0.0 if forcing is None else forcing * profiles[n]

    traces = np.empty((M + 1, Tr.shape[0], B))
    energy = np.empty((M, B))
    snaps = []
    u_prev = U0
    u = U0 + dt * U1 + 0.5 * dt * dt * (force(0) - A @ U0)
    traces[0] = Tr @ U0
    traces[1] = Tr @ u
    Au = A @ u
    energy[0] = dv * (np.sum(((u - u_prev) / dt) ** 2, axis=0) + np.sum(Au * u_prev, axis=0))
    if snapshot_stride:
        snaps.append((0, U0, U1))
    for n in range(1, M):
        u_next = 2.0 * u - u_prev + dt * dt * (force(n) - Au)
        traces[n + 1] = Tr @ u_next
        if snapshot_stride and n % snapshot_stride == 0:
            snaps.append((n, u, (u_next - u_prev) / (2 * dt)))
        Au_next = A @ u_next
        with np.errstate(over="ignore", invalid="ignore"):
            energy[n] = dv * (np.sum(((u_next - u) / dt) ** 2, axis=0) + np.sum(Au_next * u, axis=0))
        # the energy sums every node, so it is the cheapest blow-up detector
        if not np.all(np.isfinite(energy[n])):
            raise InstabilityError(n + 1)
        u_prev, u, Au = u, u_next, Au_next
    if not np.all(np.isfinite(u)):
        raise InstabilityError(M)
    if snapshot_stride:
        snaps.append((M, u, (u - u_prev) / dt))
    return np.transpose(traces, (2, 1, 0)), energy, snaps


def _single_run(spec, q, u0, u1, f=None, g=None, snapshot_stride=None):
    stride = snapshot_stride if snapshot_stride else spec.n_steps
    forcing = None if f is None else f.flat
    profiles = None if g is None else g.samples
    traces, energy, snaps = leapfrog_traces(spec, q, u0.flat, u1.flat, forcing, profiles, stride)
    states = [
        WaveState(ScalarField(spec, u[:, 0]), ScalarField(spec, v[:, 0]), n) for n, u, v in snaps
    ]
    return Trajectory(states, energy[:, 0]), BoundaryTrace(spec, traces[0])


def solve_wave_ivp(spec: DomainSpec, q: ScalarField, u0: ScalarField, u1: ScalarField,
                   m: float | None = None, snapshot_stride: int | None = None) -> tuple:
    """``(trajectory, trace)`` for ``u_tt - Delta u + q u = 0``, ``u(0) = u0``, ``u_t(0) = u1``.

    Only every ``snapshot_stride``-th state is kept (default: first and last).
    """
    _check_inputs(spec, q, (u0, u1), m)
    return _single_run(spec, q, u0, u1, snapshot_stride=snapshot_stride)


def solve_wave_source(spec: DomainSpec, q: ScalarField, f: ScalarField, g: TimeSignal,
                      m: float | None = None, snapshot_stride: int | None = None) -> tuple:
    """``(trajectory, trace)`` for ``v_tt - Delta v + q v = g(t) f`` with zero initial data."""
    _check_inputs(spec, q, (f,), m)
    if not g.matches(spec):
        raise DimensionError("time signal does not match the spec time grid")
    zero = ScalarField.zeros(spec)
    return _single_run(spec, q, zero, zero, f, g, snapshot_stride)


def duhamel_convolve(base_trace: BoundaryTrace, g: TimeSignal) -> BoundaryTrace:
    """``int_0^t g(t - s) base(s) ds`` node by node (trapezoid rule)."""
    if g.n_samples != base_trace.values.shape[1] or not np.isclose(g.dt, base_trace.dt, rtol=1e-12):
        raise DimensionError("signal and trace use different time grids")
    return BoundaryTrace(base_trace.spec, causal_convolve(g.samples, base_trace.values, base_trace.dt))


def probe_traces(spec: DomainSpec, q: ScalarField, es: EigenSystem, ks: Sequence[int]) -> list:
    """Traces of the solutions started from ``(phi_k, 0)`` for every ``k`` in ``ks`` (one batch)."""
    ks = list(ks)
    for k in ks:
        if not 1 <= k <= es.K:
            raise ConfigurationError(f"probe index {k} outside 1..{es.K}")
    U0 = np.stack([es.modes[k - 1].reshape(-1) for k in ks], axis=1)
    traces, _, _ = leapfrog_traces(spec, q, U0, np.zeros_like(U0))
    return [BoundaryTrace(spec, t) for t in traces]


def probe_norm(es: EigenSystem, k: int) -> float:
    return norm(es.field(k), "H_Delta_cal")


def measure_probes(spec: DomainSpec, q: ScalarField, q0: ScalarField, es: EigenSystem,
                   ks: Sequence[int], m: float | None = None,
                   background: Sequence[BoundaryTrace] | None = None,
                   measured: Sequence[BoundaryTrace] | None = None) -> list:
    """Probe measurements for several ``k`` at once.

    ``background`` (traces under q0) and ``measured`` (traces under q, possibly
    noisy) may be supplied to avoid recomputation.
    """
    _check_inputs(spec, q, (q0,), m)
    if es.q0 is not q0 and not np.array_equal(es.q0.values, q0.values):
        raise DimensionError("eigensystem was not built for this q0")
    ks = list(ks)
    if background is None:
        background = probe_traces(spec, q0, es, ks)
    if measured is None:
        measured = probe_traces(spec, q, es, ks)
    out = []
    for k, tq, t0 in zip(ks, measured, background):
        d = tq - t0
        out.append(ProbeMeasurement(k, float(es.eigenvalues[k - 1]), d, d.h1(), probe_norm(es, k), "wave"))
    return out


def measure_probe(spec: DomainSpec, q: ScalarField, q0: ScalarField, es: EigenSystem, k: int,
                  m: float | None = None) -> ProbeMeasurement:
    """``d_k`` = trace of ``(phi_k, 0)`` under q minus the same under q0, with its norms."""
    return measure_probes(spec, q, q0, es, [k], m)[0]


def cosine_signal(spec: DomainSpec, eigenvalue: float) -> TimeSignal:
    """``g_k(t) = cos(sqrt(lambda_k) t)``, the time factor of the probe solution under q0."""
    return TimeSignal.from_function(spec, lambda t: np.cos(np.sqrt(eigenvalue) * t))
