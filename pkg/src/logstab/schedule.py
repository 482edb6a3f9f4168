"""Stability moduli and the constant schedule that balances the spectral truncation.

Everything exponential is evaluated in log space: with realistic constants
``theta`` is in the hundreds and ``exp(theta s^p)`` overflows long before the
schedule stops being meaningful.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import bisect

from .domain import EigenSystem
from .errors import ConfigurationError, OutOfRegimeError, TruncationWarning

MODULI = ("PSI", "PHI", "THETA")
KAPPA_READINGS = ("mu1", "mu")


def modulus_exponent(kind: str, n: int) -> float:
    if kind == "PSI":
        return 1.0 / (8 + 2 * n)
    if kind == "PHI":
        return 0.5
    if kind == "THETA":
        return 1.0 / (1 + 4 * n)
    raise ValueError(f"unknown modulus {kind!r}; expected one of {MODULI}")


def modulus(kind: str, gamma: float, n: int) -> float:
    """``|ln gamma|^(-a) + gamma`` with ``a`` = 1/(8+2n) (PSI), 1/2 (PHI), 1/(1+4n) (THETA).

    The value at 0 is 0 (continuous extension); at ``gamma = 1`` the log
    vanishes and ``inf`` is returned, the bound being vacuous there.
    """
    a = modulus_exponent(kind, n)
    if gamma < 0 or math.isnan(gamma):
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    if gamma == 0.0:
        return 0.0
    if math.isinf(gamma):
        return math.inf
    lg = abs(math.log(gamma))
    if lg == 0.0:
        return math.inf
    return lg ** (-a) + gamma


@dataclass(frozen=True)
class StabilitySchedule:
    """Proof constants and the derived schedule.

    ``mu`` is the (non-constructive) exponential rate of the observability
    interpolation; ``kappa_reading`` selects whether the ``m mu^-1`` term of
    ``kappa`` uses the first Dirichlet eigenvalue ``mu1`` (default) or ``mu``.
    """

    n: int
    m: float
    tau: float
    mu1: float
    weyl: float
    mu: float = 1.0
    kappa_reading: str = "mu1"

    def __post_init__(self):
        errors = []
        if self.n not in (1, 2):
            errors.append(f"n: must be 1 or 2, got {self.n}")
        for name in ("m", "tau", "mu1", "mu"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                errors.append(f"{name}: must be positive and finite, got {v}")
        if not (self.weyl > 1 and math.isfinite(self.weyl)):
            errors.append(f"weyl: must be finite and > 1, got {self.weyl}")
        if self.kappa_reading not in KAPPA_READINGS:
            errors.append(f"kappa_reading: expected one of {KAPPA_READINGS}, got {self.kappa_reading!r}")
        if errors:
            raise ConfigurationError("; ".join(errors))

    @classmethod
    def from_eigensystem(cls, es: EigenSystem, m: float, tau: float | None = None, mu: float = 1.0,
                         kappa_reading: str = "mu1") -> "StabilitySchedule":
        spec = es.spec
        return cls(spec.dimension, m, spec.tau if tau is None else tau, es.mu1, es.weyl_constant, mu, kappa_reading)

    @property
    def kappa(self) -> float:
        denom = self.mu1 if self.kappa_reading == "mu1" else self.mu
        return self.tau**2 + self.mu1**-0.5 + self.m / denom + 1.0

    @property
    def rho(self) -> float:
        return self.weyl * (self.kappa + 1.0)

    @property
    def theta(self) -> float:
        return 1.0 + self.rho + self.mu

    @property
    def gamma_star(self) -> float:
        return math.exp(-self.theta)

    @property
    def log_gamma_star(self) -> float:
        return -self.theta

    @property
    def wave_power(self) -> float:
        return 8.0 / self.n + 2.0

    @property
    def heat_power(self) -> float:
        return 4.0 + 1.0 / self.n

    def epsilon(self, s: float, problem: str = "wave") -> float:
        """``s^(8/n+2)`` for the wave schedule, ``s^(4+1/n)`` for the heat one."""
        return s ** (self.wave_power if problem == "wave" else self.heat_power)

    def log_chi(self, s: float, problem: str = "wave") -> float:
        return (2.0 / self.n) * math.log(s) + self.theta * self.epsilon(s, problem)

    def chi(self, s: float, problem: str = "wave") -> float:
        """``s^(2/n) exp(theta eps(s))``, ``eps(s) = s^(8/n+2)`` for the wave (``inf`` on overflow)."""
        lc = self.log_chi(s, problem)
        return math.exp(lc) if lc < 700 else math.inf

    def as_dict(self) -> dict:
        return {
            "n": self.n, "m": self.m, "tau": self.tau, "mu1": self.mu1, "weyl": self.weyl, "mu": self.mu,
            "kappa_reading": self.kappa_reading, "kappa": self.kappa, "rho": self.rho, "theta": self.theta,
            "log_gamma_star": self.log_gamma_star,
        }


def _log(gamma: float) -> float:
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    return math.log(gamma)


def schedule_sstar(sched: StabilitySchedule, gamma: float | None = None, *, log_gamma: float | None = None,
                   problem: str = "wave") -> float:
    """Root ``s* >= 1`` of ``chi(s) = 1/gamma`` by bisection.

    ``log_gamma`` may be passed instead of ``gamma`` for values below the
    floating point range.  Raises :class:`OutOfRegimeError` when
    ``gamma > gamma*``.
    """
    lg = _log(gamma) if log_gamma is None else float(log_gamma)
    target = -lg
    if target < sched.theta * (1 - 1e-15):
        raise OutOfRegimeError(f"gamma = exp({lg:.6g}) exceeds gamma* = exp({-sched.theta:.6g})")
    def resid(s):
        return sched.log_chi(s, problem) - target
    if resid(1.0) >= 0.0:
        return 1.0
    hi = 2.0
    while resid(hi) < 0.0:
        hi *= 2.0
    # |log residual| <= 1e-10 gives |chi(s*) gamma - 1| <= 1e-9
    s = bisect(resid, 1.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=400)
    return float(s)


def sstar_residual(sched: StabilitySchedule, s: float, gamma: float | None = None, *, log_gamma: float | None = None) -> float:
    """``|chi(s) gamma - 1|``."""
    lg = _log(gamma) if log_gamma is None else float(log_gamma)
    return abs(math.expm1(sched.log_chi(s) + lg))


def truncation_index(sched: StabilitySchedule, gamma: float, K: int, problem: str = "wave") -> tuple:
    """``(N, branch)`` for a data gap ``gamma``.

    ``branch`` is ``"exact"`` for gamma = 0 (N = K), ``"trivial"`` when
    ``gamma > gamma*`` (N = 0) and ``"schedule"`` otherwise, where N is the
    integer with ``N <= s* < N + 1`` clamped to ``[1, K]``.
    """
    if gamma == 0.0:
        return K, "exact"
    if math.log(gamma) > sched.log_gamma_star:
        return 0, "trivial"
    s = schedule_sstar(sched, gamma, problem=problem)
    if math.floor(s) > K:
        warnings.warn(f"schedule asks for N = {math.floor(s)} modes but only K = {K} are available",
                      TruncationWarning, stacklevel=2)
    return int(min(max(math.floor(s), 1), K)), "schedule"


def log_bound_terms(sched: StabilitySchedule, s: float, log_gamma: float) -> tuple:
    """Logs of the two terms of ``s^(-2/n) + exp(theta s^(8/n+2)) gamma``."""
    return -(2.0 / sched.n) * math.log(s), sched.theta * s**sched.wave_power + log_gamma


def log_bound(sched: StabilitySchedule, s: float, log_gamma: float) -> float:
    return float(np.logaddexp(*log_bound_terms(sched, s, log_gamma)))


def brute_force_index(sched: StabilitySchedule, log_gamma: float, n_max: int = 64) -> int:
    """Integer ``N`` minimising the truncated bound over ``1..n_max`` (exhaustive)."""
    values = [log_bound(sched, float(N), log_gamma) for N in range(1, n_max + 1)]
    return int(np.argmin(values)) + 1


def log_pre_bound_terms(sched: StabilitySchedule, s: float, log_gamma: float) -> tuple:
    """Logs of the three terms before they are merged into the exponential one.

    ``s^(1+2/n)/sqrt(eps)``, ``s^(-2/n)`` and
    ``s exp(rho s^(2/n)) exp(mu eps) gamma`` with ``eps = s^(8/n+2)``.
    """
    n = sched.n
    eps = sched.epsilon(s)
    return (
        (1 + 2.0 / n) * math.log(s) - 0.5 * math.log(eps),
        -(2.0 / n) * math.log(s),
        math.log(s) + sched.rho * s ** (2.0 / n) + sched.mu * eps + log_gamma,
    )


def trivial_branch_bound(m: float, volume: float, gamma: float, gamma_star: float) -> tuple:
    """Both sides of ``m |Omega|^(1/2) gamma / gamma* >= m |Omega|^(1/2)`` (for gamma >= gamma*)."""
    base = m * math.sqrt(volume)
    return base * gamma / gamma_star, base


def coefficient_envelope(sched: StabilitySchedule, k: int, eps: float, gamma: float) -> float:
    """``(k^(2/n)/sqrt(eps))^(1/2) + exp(rho k^(2/n)/2) exp(mu eps/2) gamma^(1/2)``.

    Shape of the per-mode bound on ``|(q - q0, phi_k)|`` before truncation; the
    exponential factor is capped at ``exp(700)``.
    """
    kk = k ** (2.0 / sched.n)
    log_exp = 0.5 * sched.rho * kk + 0.5 * sched.mu * eps
    return math.sqrt(kk / math.sqrt(eps)) + math.exp(min(log_exp, 700.0)) * math.sqrt(gamma)
