"""Coefficient extraction, truncated reconstruction and end-to-end stability experiments.

Potential perturbations are recovered by linearisation about ``q0``.  With
``q = q0 + dq`` the probe difference ``w = u_q - u_q0`` solves the source
problem with right-hand side ``-dq phi_k g_k(t)``, where ``g_k`` is the time
factor of the background probe (``cos(sqrt(lambda_k) t)`` for the wave,
``exp(-lambda_k t)`` for the heat equation).  Deconvolving the measured
difference by ``g_k`` therefore yields the trace of the homogeneous solution
started from ``-dq phi_k``, which to first order in ``dq`` is
``-sum_j c_j T[phi_j phi_k]`` with ``T`` the background trace map.
"""
from __future__ import annotations

import csv
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .domain import DomainSpec, EigenSystem, ScalarField, norm, w1inf_norm
from .errors import ConfigurationError, ConstraintError, DimensionError, IllConditionedWarning
from .heat import crank_nicolson, exponential_signal, heat_probe_traces, heat_probes
from .schedule import StabilitySchedule, modulus, truncation_index
from .traces import BoundaryTrace, TimeSignal, inject_noise, trapezoid_weights
from .volterra import ConvolutionKernel, apply_S, invert_S
from .wave import ProbeMeasurement, cosine_signal, leapfrog_traces, measure_probes, probe_traces

PROBLEMS = ("WAVE_POTENTIAL", "WAVE_SOURCE", "HEAT_SOURCE", "HEAT_POTENTIAL")
MODULUS_OF = {"WAVE_POTENTIAL": "PSI", "WAVE_SOURCE": "PHI", "HEAT_SOURCE": "PHI", "HEAT_POTENTIAL": "THETA"}
COND_LIMIT = 1e8
REPORT_COLUMNS = ("id", "gamma", "error", "modulus", "fitted_C", "branch")


def _equation(problem: str) -> str:
    if problem not in PROBLEMS:
        raise ConfigurationError(f"problem: expected one of {PROBLEMS}, got {problem!r}")
    return "wave" if problem.startswith("WAVE") else "heat"


@dataclass(frozen=True)
class StabilityRecord:
    """One run: data gap ``gamma``, true error ``error`` and the modulus value at ``gamma``."""

    id: str
    gamma: float
    error: float
    modulus: float
    branch: str
    extras: dict = field(default_factory=dict, compare=False)

    @property
    def ratio(self) -> float:
        """``error / modulus`` with 0 for a zero error and for an infinite modulus."""
        if self.error == 0.0 or math.isinf(self.modulus):
            return 0.0
        if self.modulus == 0.0:
            return math.inf
        return self.error / self.modulus


@dataclass
class StabilityReport:
    """Records of one experiment with the single fitted constant and the held-out verdict."""

    kind: str
    problem: str
    records: list
    fitted_C: float
    passed: bool
    heldout: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def rows(self) -> list:
        out = []
        for r in [*self.records, *self.heldout]:
            out.append({"id": r.id, "gamma": r.gamma, "error": r.error, "modulus": r.modulus,
                        "fitted_C": self.fitted_C, "branch": r.branch})
        return out

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(REPORT_COLUMNS)
            for row in self.rows():
                writer.writerow([row["id"]] + [repr(float(row[c])) for c in REPORT_COLUMNS[1:5]] + [row["branch"]])

    def holds(self, factor: float = 1.0) -> bool:
        """``e <= factor * C * modulus(gamma)`` on the training records."""
        return all(r.ratio <= factor * self.fitted_C * (1 + 1e-12) for r in self.records)


def branch_of(sched: StabilitySchedule | None, gamma: float) -> str:
    if gamma == 0.0:
        return "exact"
    if sched is None:
        return "schedule"
    return "trivial" if math.log(gamma) > sched.log_gamma_star else "schedule"


def opnorm_surrogate(probes: Sequence[ProbeMeasurement], es: EigenSystem | None = None,
                     norm_kind: str | None = None) -> float:
    """``max_k ||d_k||_{H^1(L^2)} / ||phi_k||`` over the probes (a lower bound of the operator norm).

    The probe norm is the one stored with each measurement unless
    ``norm_kind`` is given, in which case it is recomputed from ``es``.
    """
    if not probes:
        raise ConfigurationError("opnorm_surrogate needs at least one probe")
    best = 0.0
    for p in probes:
        denom = p.probe_norm if norm_kind is None else norm(es.field(p.k), norm_kind)
        best = max(best, p.data_norm / denom)
    return best


def _trace_weights(spec: DomainSpec) -> np.ndarray:
    """``(P, M+1)`` quadrature weights of the ``L^2(Lambda)`` inner product."""
    return np.outer(spec.surface_weights, trapezoid_weights(spec.n_steps + 1, spec.time_step))


@dataclass(frozen=True, eq=False)
class BornDictionary:
    """Background traces ``T[phi_j phi_k]`` for ``j <= k <= K``, computed in one batch."""

    spec: DomainSpec
    equation: str
    K: int
    traces: np.ndarray
    index: np.ndarray

    def column(self, j: int, k: int) -> np.ndarray:
        return self.traces[self.index[j, k]]


def born_dictionary(es: EigenSystem, K: int | None = None, equation: str = "wave") -> BornDictionary:
    """Traces of the background solutions started from the products ``phi_j phi_k``.

    For the wave equation the product is the initial velocity (zero
    displacement); for the heat equation it is the initial state.
    """
    spec = es.spec
    K = es.K if K is None else K
    if K > es.K:
        raise ConfigurationError(f"K = {K} exceeds the {es.K} stored modes")
    index = np.empty((K, K), dtype=int)
    cols = []
    for j in range(K):
        for k in range(j, K):
            index[j, k] = index[k, j] = len(cols)
            cols.append((es.modes[j] * es.modes[k]).reshape(-1))
    F = np.stack(cols, axis=1)
    if equation == "wave":
        traces, _, _ = leapfrog_traces(spec, es.q0, np.zeros_like(F), F)
    else:
        traces, _, _ = crank_nicolson(spec, es.q0, F)
    return BornDictionary(spec, equation, K, traces, index)


def background_kernel(spec: DomainSpec, eigenvalue: float, equation: str) -> ConvolutionKernel:
    sig = cosine_signal(spec, eigenvalue) if equation == "wave" else exponential_signal(spec, eigenvalue)
    return ConvolutionKernel(sig)


def _solve_normal(G: np.ndarray, rhs: np.ndarray, what: str) -> tuple:
    cond = float(np.linalg.cond(G))
    if not cond < COND_LIMIT:
        alpha = 1e-8 * float(np.trace(G)) / len(G)
        warnings.warn(f"{what}: condition number {cond:.3e} exceeds {COND_LIMIT:g}; "
                      f"using Tikhonov regularisation {alpha:.3e}", IllConditionedWarning, stacklevel=3)
        G = G + alpha * np.eye(len(G))
    return np.linalg.solve(G, rhs), cond


def extract_coefficients(probes: Sequence[ProbeMeasurement], es: EigenSystem, K: int | None = None,
                         kernels: Sequence[ConvolutionKernel] | None = None,
                         dictionary: BornDictionary | None = None, mollify_width: int = 0) -> np.ndarray:
    """Linearised estimates of ``(q - q0, phi_j)`` for ``j = 1..K``.

    ``probes`` must hold the measurements for ``k = 1..K`` in order.  Each
    difference is deconvolved by its background time factor and the stacked
    residual ``h_k + sum_j c_j T[phi_j phi_k]`` is minimised in
    ``L^2(Lambda)`` through the ``K x K`` normal equations.
    """
    probes = list(probes)
    K = len(probes) if K is None else K
    if len(probes) < K or [p.k for p in probes[:K]] != list(range(1, K + 1)):
        raise ConfigurationError(f"probes for k = 1..{K} are required, in order")
    equation = probes[0].kind
    spec = es.spec
    if dictionary is None:
        dictionary = born_dictionary(es, K, equation)
    if dictionary.K < K or dictionary.equation != equation:
        raise DimensionError("Born dictionary does not match the probes")
    W = _trace_weights(spec)
    G = np.zeros((K, K))
    rhs = np.zeros(K)
    for k in range(K):
        p = probes[k]
        kernel = kernels[k] if kernels is not None else background_kernel(spec, p.eigenvalue, equation)
        h = invert_S(kernel, p.difference, mollify_width).values
        A = np.stack([dictionary.column(j, k) for j in range(K)])
        WA = A * W[None]
        G += np.tensordot(WA, A, axes=([1, 2], [1, 2]))
        rhs -= np.tensordot(WA, h, axes=([1, 2], [0, 1]))
    coeffs, _ = _solve_normal(G, rhs, "coefficient extraction")
    return coeffs


def reconstruct_potential(coefficients: Sequence[float], es: EigenSystem, gamma: float,
                          sched: StabilitySchedule, truth: ScalarField | None = None,
                          N: int | None = None, problem: str = "WAVE_POTENTIAL",
                          member_id: str = "reconstruction") -> tuple:
    """Truncated synthesis ``sum_{k <= N} c_k phi_k`` and its report row.

    ``gamma`` is the size of the data error: 0 means exact data and keeps all
    ``K`` coefficients, ``gamma > gamma*`` selects the trivial branch (zero
    field), otherwise ``N = floor(s*(gamma))`` clamped to ``[1, K]``.  ``N``
    overrides the schedule (branch ``"fixed"``).
    """
    coefficients = np.asarray(coefficients, dtype=float)
    K = len(coefficients)
    equation = _equation(problem)
    if N is not None:
        if not 0 <= N <= K:
            raise ConfigurationError(f"N must lie in 0..{K}, got {N}")
        branch = "fixed"
    else:
        N, branch = truncation_index(sched, gamma, K, equation)
    est = es.synthesize(np.where(np.arange(K) < N, coefficients, 0.0), "reconstruction")
    error = math.nan if truth is None else norm(est - truth)
    kind = MODULUS_OF[problem]
    rec = StabilityRecord(member_id, float(gamma), error, modulus(kind, gamma, sched.n), branch, {"N": N})
    return est, rec


def optimal_epsilon(m: float, bound_factor: float, mu: float, delta: float, eps_min: float = 0.0) -> float:
    """Minimiser of ``m eps^-1/2 + B exp(mu eps) delta`` (``inf`` for exact data)."""
    if delta == 0.0:
        return math.inf
    log_rhs0 = math.log(mu * bound_factor * delta)
    # stationarity: ln(m/2) - 1.5 ln eps = ln(mu B delta) + mu eps, decreasing minus increasing
    def f(le):
        return math.log(0.5 * m) - 1.5 * le - log_rhs0 - mu * math.exp(le)
    lo, hi = -60.0, 60.0
    if f(hi) > 0:
        return math.exp(hi)
    if f(lo) < 0:
        return max(math.exp(lo), eps_min)
    return max(math.exp(brentq(f, lo, hi, xtol=1e-12)), eps_min)


def source_mode_traces(spec: DomainSpec, q: ScalarField, es: EigenSystem, equation: str, K: int | None = None) -> np.ndarray:
    """``(K, P, M+1)`` traces of ``S_q(0, phi_l)`` (wave) or ``S_q(phi_l)`` (heat)."""
    K = es.K if K is None else K
    U = np.stack([es.modes[l].reshape(-1) for l in range(K)], axis=1)
    if equation == "wave":
        traces, _, _ = leapfrog_traces(spec, q, np.zeros_like(U), U)
    else:
        traces, _, _ = crank_nicolson(spec, q, U)
    return traces


def estimate_source(trace: BoundaryTrace, q: ScalarField, g: TimeSignal, sched: StabilitySchedule,
                    es: EigenSystem, problem: str = "WAVE_SOURCE", noise_level: float = 0.0,
                    truth: ScalarField | None = None, N: int | None = None,
                    mode_traces: np.ndarray | None = None, member_id: str = "source") -> tuple:
    """Recover ``f`` from the trace of the source problem with profile ``g``.

    The trace is deconvolved by ``g`` and projected on the per-mode traces.
    The number of kept modes is ``#{lambda_l <= eps*}`` with ``eps*`` the
    minimiser of the interpolation bound for data error ``noise_level``
    (all ``K`` modes for exact data).  The row reports the misfit
    ``||trace - C(f_hat)||_{H^1}`` as gamma and ``||f - f_hat||`` in
    ``H^-1`` (wave) or ``L^2`` (heat) as error.
    """
    equation = _equation(problem)
    spec = es.spec
    kernel = ConvolutionKernel(g)
    K = es.K
    if mode_traces is None:
        mode_traces = source_mode_traces(spec, q, es, equation)
    h = invert_S(kernel, trace).values
    W = _trace_weights(spec)
    WT = mode_traces * W[None]
    G = np.tensordot(WT, mode_traces, axes=([1, 2], [1, 2]))
    rhs = np.tensordot(WT, h, axes=([1, 2], [0, 1]))
    coeffs, _ = _solve_normal(G, rhs, "source estimation")
    if N is not None:
        branch = "fixed"
    elif noise_level == 0.0:
        N, branch = K, "exact"
    else:
        factor = kernel.bound_factor if equation == "wave" else kernel.bound_factor / math.sqrt(2.0)
        eps = optimal_epsilon(sched.m, factor, sched.mu, noise_level, 1.0 if equation == "heat" else 0.0)
        N = int(min(max(np.count_nonzero(es.eigenvalues <= eps), 1), K))
        branch = "schedule"
    kept = np.where(np.arange(K) < N, coeffs, 0.0)
    est = es.synthesize(kept, "source estimate")
    fitted = np.tensordot(kept, mode_traces, axes=1)
    misfit = (trace - apply_S(kernel, BoundaryTrace(spec, fitted))).h1()
    error = math.nan
    if truth is not None:
        error = norm(truth - est, "H_minus1", es) if equation == "wave" else norm(truth - est)
    rec = StabilityRecord(member_id, misfit, error, modulus("PHI", misfit, sched.n), branch_of(sched, misfit), {"N": N})
    return est, rec


@dataclass(frozen=True, eq=False)
class Member:
    """One family member: a potential perturbation ``q - q0`` or a source ``f``."""

    id: str
    field: ScalarField
    extras: dict = field(default_factory=dict)


def _as_members(family, prefix: str) -> list:
    out = []
    for i, item in enumerate(family):
        if isinstance(item, Member):
            out.append(item)
        elif isinstance(item, ScalarField):
            out.append(Member(f"{prefix}{i + 1}", item))
        else:
            mid, fld = item
            out.append(Member(str(mid), fld))
    return out


def check_member(problem: str, member: Member, m: float, q0: ScalarField | None = None) -> None:
    """Raise :class:`ConstraintError` naming the a priori bound a member violates."""
    f = member.field
    if problem.endswith("POTENTIAL"):
        if q0.min() < 0:
            raise ConstraintError("q0 >= 0", f"min q0 = {q0.min():.6g}")
        if q0.sup() > m * (1 + 1e-12):
            raise ConstraintError("q0 in mB_Linf", f"sup |q0| = {q0.sup():.6g} exceeds m = {m:.6g}")
        if (q0 + f).sup() > m * (1 + 1e-12):
            raise ConstraintError("q in mB_Linf", f"member {member.id}: sup |q| exceeds m = {m:.6g}")
        w = w1inf_norm(f)
        if w > m * (1 + 1e-12):
            raise ConstraintError("q - q0 in mB_W1inf", f"member {member.id}: W^1,inf norm {w:.6g} exceeds m = {m:.6g}")
    elif problem == "WAVE_SOURCE":
        v = norm(f)
        if v > m * (1 + 1e-12):
            raise ConstraintError("f in mB_L2", f"member {member.id}: L2 norm {v:.6g} exceeds m = {m:.6g}")
    else:
        v = norm(f, "H1_0")
        if v > m * (1 + 1e-12):
            raise ConstraintError("f in mB_H1_0", f"member {member.id}: H1_0 norm {v:.6g} exceeds m = {m:.6g}")


def _noise_seed(seed: int, *path: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & (2**64 - 1), *path])


def default_horizons(spec: DomainSpec, factors: Sequence[float] = (2.0, 4.0, 8.0)) -> list:
    """Horizons ``factor * diam(Omega)`` swept in place of the unknown minimal time."""
    return [float(f) * spec.diameter for f in factors]


def _potential_runs(problem, members, levels, spec, q0, es, ks, seed, offset):
    equation = _equation(problem)
    if equation == "wave":
        background = probe_traces(spec, q0, es, ks)
    else:
        background = heat_probe_traces(spec, q0, es, ks)
    out = []
    for i, mem in enumerate(members):
        q = q0 + mem.field
        clean = probe_traces(spec, q, es, ks) if equation == "wave" else heat_probe_traces(spec, q, es, ks)
        for j, level in levels[i]:
            noisy = [inject_noise(t, level, _noise_seed(seed, offset + i, j, k)) for k, t in zip(ks, clean)]
            if equation == "wave":
                probes = measure_probes(spec, q, q0, es, ks, background=background, measured=noisy)
            else:
                probes = heat_probes(spec, q, q0, es, ks, background=background, measured=noisy)
            out.append((mem, level, opnorm_surrogate(probes), norm(mem.field)))
    return out


def _source_runs(problem, members, levels, spec, q, g, seed, offset):
    equation = _equation(problem)
    F = np.stack([mem.field.flat for mem in members], axis=1)
    profiles = np.tile(g.samples[:, None], (1, len(members)))
    if equation == "wave":
        traces, _, _ = leapfrog_traces(spec, q, np.zeros_like(F), np.zeros_like(F), F, profiles)
    else:
        traces, _, _ = crank_nicolson(spec, q, np.zeros_like(F), F, profiles)
    out = []
    for i, mem in enumerate(members):
        clean = BoundaryTrace(spec, traces[i])
        e = norm(mem.field, "H_minus1") if equation == "wave" else norm(mem.field)
        for j, level in levels[i]:
            noisy = inject_noise(clean, level, _noise_seed(seed, offset + i, j))
            out.append((mem, level, noisy.h1(), e))
    return out


def run_stability_experiment(problem: str, family, sched: StabilitySchedule, es: EigenSystem,
                             noise_levels: Sequence[float] = (0.0,), heldout=(), *, q: ScalarField | None = None,
                             g: TimeSignal | None = None, K: int | None = None, seed: int = 0,
                             heldout_factor: float = 2.0) -> StabilityReport:
    """Measure ``(gamma, e)`` for every member and noise level and fit one constant.

    Potential problems perturb the background ``q0 = es.q0`` by each member;
    gamma is the probe surrogate of the operator-norm gap and ``e`` the
    ``L^2`` norm of the perturbation.  Source problems use the potential
    ``q`` (default ``q0``) and profile ``g`` (default 1); gamma is the
    ``H^1``-in-time trace norm and ``e`` the ``H^-1`` (wave) or ``L^2`` (heat)
    norm of ``f``.  Noise is added to the measured traces only.

    ``C = max e / modulus(gamma)`` over the training runs; held-out member i
    is run at ``noise_levels[i % len]`` and passes when
    ``e <= heldout_factor * C * modulus(gamma)``.
    """
    start = time.perf_counter()
    equation = _equation(problem)
    kind = MODULUS_OF[problem]
    spec = es.spec
    members = _as_members(family, "member-")
    held = _as_members(heldout, "heldout-")
    if not members:
        raise ConfigurationError("family empty")
    levels = [float(v) for v in noise_levels]
    if not levels:
        raise ConfigurationError("noise_levels: at least one level is required")
    q0 = es.q0
    for mem in [*members, *held]:
        if mem.field.spec != spec:
            raise DimensionError(f"member {mem.id} lives on another grid")
        check_member(problem, mem, sched.m, q0)
    train_levels = [list(enumerate(levels))] * len(members)
    held_levels = [[(i % len(levels), levels[i % len(levels)])] for i in range(len(held))]
    if problem.endswith("POTENTIAL"):
        ks = list(range(1, (es.K if K is None else K) + 1))
        runs = _potential_runs(problem, members + held, train_levels + held_levels, spec, q0, es, ks, seed, 0)
    else:
        q = q0 if q is None else q
        g = TimeSignal.constant(spec) if g is None else g
        if abs(g.g0) < 1e-12:
            raise ConfigurationError("g(0) != 0 is required for the source problem")
        runs = _source_runs(problem, members + held, train_levels + held_levels, spec, q, g, seed, 0)
    n_train = len(members) * len(levels)
    records = []
    for idx, (mem, level, gamma, e) in enumerate(runs):
        rid = f"{mem.id}@noise={level!r}"
        records.append(StabilityRecord(rid, float(gamma), float(e), modulus(kind, gamma, sched.n),
                                       branch_of(sched, gamma), {"noise": level, **mem.extras}))
    train, test = records[:n_train], records[n_train:]
    C = max(r.ratio for r in train)
    ok = math.isfinite(C) and all(r.ratio <= heldout_factor * C * (1 + 1e-12) for r in test)
    meta = {"problem": problem, "equation": equation, "modulus": kind, "noise_levels": levels, "seed": seed,
            "heldout_factor": heldout_factor, "tau": spec.tau, "K": es.K if K is None else K,
            "schedule": sched.as_dict(), "wall_time": time.perf_counter() - start}
    return StabilityReport(kind, problem, train, float(C), bool(ok), test, meta)


def fit_observability_rate(spec: DomainSpec, q: ScalarField, family: Sequence[ScalarField],
                           eps_grid: Sequence[float] | None = None) -> float:
    """Smallest rate ``mu`` such that, with the constant normalised to 1,

        ||u0||_{L^2} <= eps^-1/2 ||u0||_{H^1_0} + exp(mu eps) ||d_nu u||_{L^2(Lambda)}

    holds for every initial displacement ``u0`` in ``family`` (zero velocity)
    and every ``eps`` on the grid.
    """
    if eps_grid is None:
        eps_grid = np.geomspace(1.0, 1e4, 81)
    U0 = np.stack([f.flat for f in family], axis=1)
    traces, _, _ = leapfrog_traces(spec, q, U0, np.zeros_like(U0))
    rate = 0.0
    for j, f in enumerate(family):
        r, a = norm(f), norm(f, "H1_0")
        b = BoundaryTrace(spec, traces[j]).l2()
        for eps in eps_grid:
            gap = r - a / math.sqrt(eps)
            if gap <= 0:
                continue
            if b == 0.0:
                return math.inf
            rate = max(rate, math.log(gap / b) / eps)
    return rate
