"""Causal time convolution ``(S h)(t) = int_0^t g(t - s) h(s) ds`` and its inverse.

Both directions use the trapezoid rule.  The inverse differentiates the data
and marches the resulting second-kind equation
``g(0) h(t) + int_0^t g'(t - s) h(s) ds = w'(t)``; in discrete form this is the
differenced trapezoid system, so ``apply_S(invert_S(w))`` reproduces ``w`` to
rounding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.signal import fftconvolve

from .errors import DimensionError, DomainError, SingularKernelError
from .traces import BoundaryTrace, TimeSignal

G0_MIN = 1e-12
W0_TOL = 1e-8


def causal_convolve(g: np.ndarray, h: np.ndarray, dt: float) -> np.ndarray:
    """Trapezoid-rule ``int_0^{t_n} g(t_n - s) h(s) ds`` along the last axis of ``h``."""
    g = np.asarray(g, dtype=float)
    h = np.atleast_2d(np.asarray(h, dtype=float))
    n = h.shape[-1]
    if g.shape[-1] != n:
        raise DimensionError(f"kernel has {g.shape[-1]} samples, data has {n}")
    full = fftconvolve(h, g[None, :], axes=-1)[..., :n]
    out = dt * (full - 0.5 * g[None, :] * h[..., :1] - 0.5 * g[0] * h)
    out[..., 0] = 0.0
    return out


@dataclass(frozen=True, eq=False)
class ConvolutionKernel:
    """Kernel ``g`` of the Volterra operator with the constants of its inversion bound."""

    g: TimeSignal

    def __post_init__(self):
        if abs(self.g.g0) < G0_MIN:
            raise SingularKernelError(f"|g(0)| = {abs(self.g.g0):.3e} is below {G0_MIN:g}")

    @property
    def g0(self) -> float:
        return self.g.g0

    @property
    def horizon(self) -> float:
        return self.g.dt * (self.g.n_samples - 1)

    @property
    def derivative_l2_sq(self) -> float:
        return self.g.derivative_l2_sq()

    @property
    def log_bound_factor(self) -> float:
        return 0.5 * math.log(2.0) - math.log(abs(self.g0)) + self.horizon * self.derivative_l2_sq / self.g0**2

    @property
    def bound_factor(self) -> float:
        """``sqrt(2)/|g(0)| * exp(tau ||g'||^2 / |g(0)|^2)``; ``inf`` once it overflows."""
        lb = self.log_bound_factor
        return math.exp(lb) if lb < 700 else math.inf


def _check(kernel: ConvolutionKernel, trace: BoundaryTrace):
    if kernel.g.n_samples != trace.values.shape[1] or not math.isclose(kernel.g.dt, trace.dt, rel_tol=1e-12):
        raise DimensionError("kernel and trace use different time grids")


def apply_S(kernel: ConvolutionKernel, h: BoundaryTrace) -> BoundaryTrace:
    """Causal convolution per window node; the result vanishes at t = 0."""
    _check(kernel, h)
    return BoundaryTrace(h.spec, causal_convolve(kernel.g.samples, h.values, h.dt))


def _lower_toeplitz_solve(col: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``T x = rhs`` (last axis) for lower-triangular Toeplitz ``T`` with first column ``col``.

    ``T`` is multiplication by the power series ``col`` truncated at the length
    of ``rhs``; its inverse is the reciprocal series, built by forward recursion.
    """
    n = len(col)
    inv = np.empty(n)
    inv[0] = 1.0 / col[0]
    for i in range(1, n):
        inv[i] = -np.dot(col[1 : i + 1], inv[i - 1 :: -1]) * inv[0]
    rhs = np.atleast_2d(rhs)
    return fftconvolve(rhs, inv[None, :], axes=-1)[..., :n]


def _second_difference_start(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Value ``x`` minimising the roughness of ``a + x b`` (per row of ``a``)."""
    d2a = np.diff(a, 2, axis=-1)
    d2b = np.diff(b, 2)
    return -(d2a @ d2b) / np.dot(d2b, d2b)


def invert_S(kernel: ConvolutionKernel, w: BoundaryTrace, mollify_width: int = 0) -> BoundaryTrace:
    """Solve ``S h = w`` for ``h`` on every window node.

    ``w`` must vanish at ``t = 0``.  The discrete system determines ``h`` up
    to its initial value, whose error would only excite the neutral
    alternating mode of the trapezoid rule; the initial value is therefore
    chosen to make ``h`` as smooth as possible (least second differences).
    ``mollify_width > 1`` applies a moving average to ``w`` first.
    """
    _check(kernel, w)
    vals = np.array(w.values, dtype=float)
    scale = max(1.0, float(np.max(np.abs(vals))))
    if np.max(np.abs(vals[:, 0])) > W0_TOL * scale:
        raise DomainError(f"w(0) = {np.max(np.abs(vals[:, 0])):.3e}; data must vanish at t = 0")
    if mollify_width > 1:
        vals = uniform_filter1d(vals, size=int(mollify_width), axis=1, mode="nearest")
        vals -= vals[:, :1]
    dt = w.dt
    g = kernel.g.samples
    M = len(g) - 1
    if M < 1:
        return BoundaryTrace(w.spec, np.zeros_like(vals))
    dg = np.diff(g)
    col = np.empty(M)
    col[0] = 0.5 * g[0]
    if M > 1:
        col[1] = 0.5 * g[0] + dg[0]
        col[2:] = dg[1 : M - 1]
    rhs = np.diff(vals, axis=1) / dt
    r = 0.5 * dg.copy()
    r[0] += 0.5 * g[0]
    a = _lower_toeplitz_solve(col, rhs)
    b = _lower_toeplitz_solve(col, r)[0]
    a_full = np.concatenate([np.zeros((a.shape[0], 1)), a], axis=1)
    b_full = np.concatenate([[1.0], -b])
    if M >= 2:
        h0 = _second_difference_start(a_full, b_full)
    else:
        h0 = rhs[:, 0] / g[0]
    h = a_full + h0[:, None] * b_full[None, :]
    return BoundaryTrace(w.spec, h)


def volterra_bound_holds(kernel: ConvolutionKernel, h: BoundaryTrace, slack: float = 0.05) -> tuple:
    """Check ``||h||_{L^2} <= (1 + slack) B(g, tau) ||S h||_{H^1}``; returns ``(holds, lhs, rhs)``."""
    lhs = h.l2()
    rhs = kernel.bound_factor * apply_S(kernel, h).h1()
    return lhs <= (1.0 + slack) * rhs, lhs, rhs
