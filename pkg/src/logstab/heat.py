"""Crank-Nicolson solver for ``u_t - Delta u + q u = g(t) f`` and the heat-side harnesses.

One step solves

    (I + dt/2 A_q) u^{n+1} = (I - dt/2 A_q) u^n + dt/2 (g_n + g_{n+1}) f

with a single sparse LU factorisation per run.
"""
from __future__ import annotations

import math
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .domain import DomainSpec, EigenSystem, ScalarField, build_laplacian, norm
from .errors import ConfigurationError, DimensionError, NumericalError
from .traces import BoundaryTrace, TimeSignal
from .wave import ProbeMeasurement


def crank_nicolson(spec: DomainSpec, q: ScalarField, U0: np.ndarray,
                   forcing: np.ndarray | None = None, profiles: np.ndarray | None = None,
                   snapshot_stride: int = 0) -> tuple:
    """Batched CN over the columns of ``U0`` (``(N, B)``).

    Returns ``(traces (B, P, M+1), final (N, B), snapshots)``; snapshots are
    ``(step, u)`` pairs taken every ``snapshot_stride`` steps.
    """
    A = build_laplacian(spec, q).matrix
    Tr = spec.trace_matrix
    dt = spec.time_step
    M = spec.n_steps
    eye = sp.identity(spec.size, format="csc")
    try:
        lu = spla.splu(sp.csc_matrix(eye + 0.5 * dt * A))
    except RuntimeError as exc:
        raise NumericalError(f"Crank-Nicolson factorisation failed: {exc}") from exc
    explicit = sp.csr_matrix(eye - 0.5 * dt * A)
    u = np.asarray(U0, dtype=float).reshape(spec.size, -1).copy()
    B = u.shape[1]
    if forcing is not None:
        forcing = np.asarray(forcing, dtype=float).reshape(spec.size, -1)
        profiles = np.asarray(profiles, dtype=float).reshape(M + 1, -1)
        if profiles.shape[0] != M + 1:
            raise DimensionError("forcing profiles do not match the time grid")
    traces = np.empty((M + 1, Tr.shape[0], B))
    traces[0] = Tr @ u
    snaps = [(0, u.copy())] if snapshot_stride else []
    for n in range(M):
        rhs = explicit @ u
        if forcing is not None:
            rhs += 0.5 * dt * forcing * (profiles[n] + profiles[n + 1])
        u = lu.solve(rhs)
        row = Tr @ u
        if not np.all(np.isfinite(row)):
            raise NumericalError(f"non-finite values at time step {n + 1}")
        traces[n + 1] = row
        if snapshot_stride and ((n + 1) % snapshot_stride == 0 or n + 1 == M):
            snaps.append((n + 1, u.copy()))
    return np.transpose(traces, (2, 1, 0)), u, snaps


def _check(spec, q, fields, m):
    for f in (q, *fields):
        if f.spec != spec:
            raise DimensionError("all fields must live on the grid of spec")
    if m is not None:
        q.check_bound(m, "q")


def solve_heat_source(spec: DomainSpec, q: ScalarField, f: ScalarField, g: TimeSignal,
                      m: float | None = None) -> tuple:
    """``(u(., tau), trace)`` for ``u_t - Delta u + q u = g(t) f``, ``u(0) = 0``."""
    _check(spec, q, (f,), m)
    if not g.matches(spec):
        raise DimensionError("time signal does not match the spec time grid")
    traces, final, _ = crank_nicolson(spec, q, np.zeros(spec.size), f.flat, g.samples)
    return ScalarField(spec, final[:, 0]), BoundaryTrace(spec, traces[0])


def solve_heat_ivp(spec: DomainSpec, q: ScalarField, u0: ScalarField, m: float | None = None,
                   snapshot_stride: int | None = None) -> tuple:
    """``(snapshots, trace, u(., tau))`` for the homogeneous equation with ``u(0) = u0``.

    ``snapshots`` is a list of ``(step, ScalarField)``; by default only the
    initial and final states are kept.
    """
    _check(spec, q, (u0,), m)
    stride = snapshot_stride or spec.n_steps
    traces, final, snaps = crank_nicolson(spec, q, u0.flat, snapshot_stride=stride)
    snapshots = [(n, ScalarField(spec, u[:, 0])) for n, u in snaps]
    return snapshots, BoundaryTrace(spec, traces[0]), ScalarField(spec, final[:, 0])


def heat_probe_traces(spec: DomainSpec, q: ScalarField, es: EigenSystem, ks: Sequence[int]) -> list:
    ks = list(ks)
    for k in ks:
        if not 1 <= k <= es.K:
            raise ConfigurationError(f"probe index {k} outside 1..{es.K}")
    U0 = np.stack([es.modes[k - 1].reshape(-1) for k in ks], axis=1)
    traces, _, _ = crank_nicolson(spec, q, U0)
    return [BoundaryTrace(spec, t) for t in traces]


def heat_probes(spec: DomainSpec, q: ScalarField, q0: ScalarField, es: EigenSystem, ks: Sequence[int],
                m: float | None = None, background: Sequence[BoundaryTrace] | None = None,
                measured: Sequence[BoundaryTrace] | None = None) -> list:
    """``N_q(phi_k) - N_q0(phi_k)`` for several k, with H^1-in-time and ``H_0``-cal norms."""
    _check(spec, q, (q0,), m)
    if es.q0 is not q0 and not np.array_equal(es.q0.values, q0.values):
        raise DimensionError("eigensystem was not built for this q0")
    ks = list(ks)
    if background is None:
        background = heat_probe_traces(spec, q0, es, ks)
    if measured is None:
        measured = heat_probe_traces(spec, q, es, ks)
    out = []
    for k, tq, t0 in zip(ks, measured, background):
        d = tq - t0
        out.append(ProbeMeasurement(k, float(es.eigenvalues[k - 1]), d, d.h1(), norm(es.field(k), "H0_cal"), "heat"))
    return out


def heat_probe(spec: DomainSpec, q: ScalarField, q0: ScalarField, es: EigenSystem, k: int,
               m: float | None = None) -> ProbeMeasurement:
    return heat_probes(spec, q, q0, es, [k], m)[0]


def exponential_signal(spec: DomainSpec, eigenvalue: float) -> TimeSignal:
    """``exp(-lambda_k t)``, the time factor of the heat probe under q0."""
    return TimeSignal.from_function(spec, lambda t: np.exp(-eigenvalue * t))


class Observability(NamedTuple):
    lhs: float
    rhs: float
    ratio: float

    @property
    def flag(self) -> str:
        if self.rhs == 0.0:
            return "undefined" if self.lhs == 0.0 else "violation"
        return "ok"


def final_time_observability(spec: DomainSpec, q: ScalarField, f: ScalarField) -> Observability:
    """``||S_q(f)(tau)||_{L^2}`` against ``||d_nu S_q(f)||_{L^2(Lambda)}``.

    ``ratio`` is NaN when both sides vanish and ``inf`` when only the trace
    vanishes; the latter would contradict observability and points at a
    discretisation fault.
    """
    _, trace, final = solve_heat_ivp(spec, q, f)
    lhs, rhs = norm(final), trace.l2()
    if rhs == 0.0:
        return Observability(lhs, rhs, math.nan if lhs == 0.0 else math.inf)
    return Observability(lhs, rhs, lhs / rhs)


def fit_observability_constant(spec: DomainSpec, q: ScalarField, family: Sequence[ScalarField]) -> float:
    """Smallest K with ``||S_q(f)(tau)|| <= K ||d_nu S_q(f)||_{L^2(Lambda)}`` over ``family``."""
    U0 = np.stack([f.flat for f in family], axis=1)
    traces, final, _ = crank_nicolson(spec, q, U0)
    ratios = []
    for j in range(len(family)):
        lhs = norm(ScalarField(spec, final[:, j]))
        rhs = BoundaryTrace(spec, traces[j]).l2()
        if rhs == 0.0:
            if lhs > 0.0:
                raise NumericalError(f"observability violated by family member {j}")
            continue
        ratios.append(lhs / rhs)
    return max(ratios) if ratios else 0.0


def nonneg_shift(q: ScalarField, g: TimeSignal, m: float) -> tuple:
    """Potential ``q + m`` and source profile ``g e^{-m t}`` of the problem solved by ``u e^{-m t}``."""
    shifted = TimeSignal(g.samples * np.exp(-m * g.times), g.dt)
    return q + m, shifted


def unshift_trace(trace: BoundaryTrace, m: float) -> BoundaryTrace:
    """Undo :func:`nonneg_shift` on a trace (multiply by ``e^{m t}``)."""
    return BoundaryTrace(trace.spec, trace.values * np.exp(m * trace.times)[None, :])


def spectral_decay_ratios(spec: DomainSpec, q: ScalarField, f: ScalarField, es: EigenSystem) -> np.ndarray:
    """``|(f, phi_l)| / (e^{lambda_l tau} ||S_q(f)(tau)||)`` for the modes of ``-Delta + q`` in ``es``."""
    if not np.array_equal(es.q0.values, q.values):
        raise DimensionError("spectral decay uses the eigensystem of -Delta + q itself")
    _, _, final = solve_heat_ivp(spec, q, f)
    c = np.abs(es.coefficients(f))
    denom = np.exp(es.eigenvalues * spec.tau) * norm(final)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(denom > 0, c / denom, np.where(c > 0, np.inf, 0.0))


class InterpolationRecord(NamedTuple):
    eps: float
    l2: float
    h10: float
    data: float


def interpolation_records(spec: DomainSpec, q: ScalarField, family: Sequence[ScalarField], g: TimeSignal,
                          eps_grid: Sequence[float] = (1, 2, 4, 8, 16, 32, 64)) -> list:
    """Quantities entering the interpolation inequality of the heat source problem.

    ``data`` already carries the kernel factor
    ``exp(tau ||g'||^2 / g(0)^2) / |g(0)|`` times the H^1-in-time trace norm.
    """
    if abs(g.g0) == 0.0:
        raise ConfigurationError("g(0) != 0 is required")
    factor = math.exp(spec.tau * g.derivative_l2_sq() / g.g0**2) / abs(g.g0)
    U0 = np.stack([f.flat for f in family], axis=1)
    traces, _, _ = crank_nicolson(spec, q, np.zeros_like(U0), U0, np.tile(g.samples[:, None], (1, len(family))))
    out = []
    for j, f in enumerate(family):
        data = factor * BoundaryTrace(spec, traces[j]).h1()
        for eps in eps_grid:
            out.append(InterpolationRecord(float(eps), norm(f), norm(f, "H1_0"), data))
    return out


def _interpolation_ratios(records, c):
    return np.array([
        (r.eps ** -0.5 * r.h10 + math.exp(min(c * r.eps, 700.0)) * r.data) / r.l2 for r in records if r.l2 > 0
    ])


def fit_interpolation_constants(records: Sequence[InterpolationRecord],
                                c_grid: Sequence[float] | None = None, level: float = 0.9) -> tuple:
    """Fit ``(C, c)`` so that ``C ||f|| <= eps^-1/2 ||f||_{H^1_0} + e^{c eps} data`` on ``records``.

    ``C(c)`` is the largest admissible constant for a given rate; the fitted
    rate is the smallest grid value reaching ``level`` times the best ``C``.
    """
    if c_grid is None:
        c_grid = np.geomspace(1e-3, 10.0, 41)
    Cs = np.array([_interpolation_ratios(records, c).min() for c in c_grid])
    target = level * Cs.max()
    i = int(np.argmax(Cs >= target))
    return float(Cs[i]), float(c_grid[i])


def interpolation_holds(records: Sequence[InterpolationRecord], C: float, c: float) -> bool:
    return bool(np.all(C <= _interpolation_ratios(records, c) * (1 + 1e-12)))
