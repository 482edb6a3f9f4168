"""Deterministic perturbation families: smooth bumps, random smooth fields and mode combinations.

Random members are defined as continuous functions of ``x`` drawn from a
``numpy`` seed sequence, so the same seed gives the same function on every
grid and refining the mesh only changes the sampling.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .domain import DomainSpec, EigenSystem, ScalarField


@dataclass(frozen=True)
class Bump:
    """``amplitude * cos^2(pi r / (2 radius))`` for ``r < radius``, zero outside (C^1, compact support)."""

    center: tuple
    radius: float
    amplitude: float = 1.0

    def __call__(self, *x):
        r2 = sum((xi - ci) ** 2 for xi, ci in zip(x, self.center))
        r = np.sqrt(r2)
        inside = r < self.radius
        return self.amplitude * np.where(inside, np.cos(0.5 * np.pi * np.minimum(r, self.radius) / self.radius) ** 2, 0.0)

    def w1inf(self) -> float:
        """Exact ``max(sup |b|, sup |grad b|)``; the gradient peaks at ``r = radius/2``."""
        return abs(self.amplitude) * max(1.0, 0.5 * math.pi / self.radius)

    def scaled(self, alpha: float) -> "Bump":
        return Bump(self.center, self.radius, self.amplitude * alpha)

    def field(self, spec: DomainSpec, tag: str | None = None) -> ScalarField:
        return ScalarField.from_function(spec, self, tag)


def default_bump(spec: DomainSpec) -> Bump:
    """Bump centred in the domain with radius a third of the shortest side."""
    return Bump(tuple(0.5 * L for L in spec.lengths), min(spec.lengths) / 3.0)


def random_bumps(spec: DomainSpec, count: int, seed: int, amplitude: float = 1.0) -> list:
    """``count`` bumps with seeded centres in the middle half of the box and radii in [0.2, 0.35] x min side."""
    children = np.random.SeedSequence(seed).spawn(count)
    out = []
    for child in children:
        rng = np.random.default_rng(child)
        center = tuple(float(L * rng.uniform(0.25, 0.75)) for L in spec.lengths)
        radius = float(min(spec.lengths) * rng.uniform(0.2, 0.35))
        out.append(Bump(center, radius, amplitude))
    return out


@dataclass(frozen=True)
class SineSeries:
    """Finite sum ``sum_j a_j prod_i sin(k_ij pi x_i / L_i)`` (vanishes on the boundary)."""

    lengths: tuple
    wavenumbers: tuple
    amplitudes: tuple

    def __call__(self, *x):
        total = 0.0
        for ks, a in zip(self.wavenumbers, self.amplitudes):
            term = a
            for xi, k, L in zip(x, ks, self.lengths):
                term = term * np.sin(k * np.pi * xi / L)
            total = total + term
        return total

    def field(self, spec: DomainSpec, tag: str | None = None) -> ScalarField:
        return ScalarField.from_function(spec, self, tag)


def random_sine_series(spec: DomainSpec, seed: int, n_terms: int = 6, max_wavenumber: int = 4,
                       sup_bound: float = 1.0) -> SineSeries:
    """Seeded smooth field with decaying coefficients and ``sum |a_j| = sup_bound`` (so ``sup <= sup_bound``)."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    ks = tuple(tuple(int(k) for k in rng.integers(1, max_wavenumber + 1, size=spec.dimension)) for _ in range(n_terms))
    raw = rng.standard_normal(n_terms) / np.array([1.0 + sum(k) for k in ks])
    amps = sup_bound * raw / np.sum(np.abs(raw))
    return SineSeries(tuple(spec.lengths), ks, tuple(float(a) for a in amps))


@dataclass(frozen=True)
class CosineSeries:
    """Like :class:`SineSeries` with a constant offset and cosines; does not vanish on the boundary."""

    lengths: tuple
    offset: float
    wavenumbers: tuple
    amplitudes: tuple

    def __call__(self, *x):
        total = self.offset
        for ks, a in zip(self.wavenumbers, self.amplitudes):
            term = a
            for xi, k, L in zip(x, ks, self.lengths):
                term = term * np.cos(k * np.pi * xi / L)
            total = total + term
        return total


def random_potential(spec: DomainSpec, seed: int, sup_bound: float = 1.0, nonneg: bool = False,
                     n_terms: int = 5) -> ScalarField:
    """Seeded smooth potential with ``sup |q| <= sup_bound`` (and ``q >= 0`` when ``nonneg``)."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    ks = tuple(tuple(int(k) for k in rng.integers(0, 4, size=spec.dimension)) for _ in range(n_terms))
    raw = rng.standard_normal(n_terms)
    if nonneg:
        amps = 0.5 * sup_bound * raw / np.sum(np.abs(raw))
        fn = CosineSeries(tuple(spec.lengths), 0.5 * sup_bound, ks, tuple(float(a) for a in amps))
    else:
        amps = sup_bound * raw / np.sum(np.abs(raw))
        fn = CosineSeries(tuple(spec.lengths), 0.0, ks, tuple(float(a) for a in amps))
    return ScalarField.from_function(spec, fn, "random potential")


def mode_combination(es: EigenSystem, coefficients: Sequence[float], tag: str | None = None) -> ScalarField:
    """``sum_k c_k phi_k`` over the first ``len(coefficients)`` modes of ``es``."""
    return es.synthesize(coefficients, tag)


def sparse_mode_combination(es: EigenSystem, terms: dict, tag: str | None = None) -> ScalarField:
    """``sum c phi_k`` from a ``{k: c}`` mapping (1-based mode numbers)."""
    coeffs = np.zeros(max(terms))
    for k, c in terms.items():
        coeffs[int(k) - 1] = float(c)
    return es.synthesize(coeffs, tag)
