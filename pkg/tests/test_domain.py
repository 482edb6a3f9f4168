import math
import warnings

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from logstab.domain import (
    DomainSpec,
    ScalarField,
    build_laplacian,
    domain_violations,
    eigensolve,
    norm,
    spectral_h1,
    w1inf_norm,
    weyl_fit,
)
from logstab.errors import ConfigurationError, ConstraintError, DimensionError, TruncationWarning
from logstab.families import random_potential

from conftest import LEFT, discrete_square_eigenvalue, unit_square


def interval(N=3, L=1.0, tau=1.0, dt=None):
    h = L / (N + 1)
    return DomainSpec(1, (L,), N, (("left", (0.0, 0.0)),), tau, dt or 0.5 * h)


def test_domain_collects_every_violation():
    errs = domain_violations(2, (1.0, 1.0), 63, (), 2.0, 0.1)
    assert any(e.startswith("cfl") for e in errs)
    assert any(e.startswith("window") for e in errs)
    with pytest.raises(ConfigurationError, match="cfl"):
        unit_square(dt=0.1)


def test_domain_rejects_bad_shapes():
    assert domain_violations(3, (1.0,), 3, LEFT, 1.0, 0.01)[0].startswith("dimension")
    errs = domain_violations(2, (1.0, -1.0), 2, LEFT, -1.0, 0.01)
    assert {e.split(":")[0] for e in errs} == {"lengths", "grid_points", "tau"}
    assert any("no grid node" in e for e in domain_violations(2, (1.0, 1.0), 3, (("left", (0.1, 0.2)),), 1.0, 1e-3))


def test_grid_quantities(wave_spec):
    assert wave_spec.h == (1 / 64, 1 / 64)
    assert wave_spec.n_steps == 2000
    assert wave_spec.n_trace_nodes == 63
    assert math.isclose(wave_spec.diameter, math.sqrt(2))
    assert interval(tau=0.3, dt=0.1).n_steps == 3


def test_one_dimensional_stencil():
    op = build_laplacian(interval(), ScalarField.zeros(interval()))
    A = op.matrix.toarray()
    h = 0.25
    expected = (np.diag([2.0] * 3) - np.diag([1.0] * 2, 1) - np.diag([1.0] * 2, -1)) / h**2
    np.testing.assert_allclose(A, expected)


def test_constant_potential_adds_identity(small_spec):
    A0 = build_laplacian(small_spec, ScalarField.zeros(small_spec)).matrix
    Ac = build_laplacian(small_spec, ScalarField.constant(small_spec, 3.5)).matrix
    assert abs(Ac - A0 - 3.5 * sp.identity(small_spec.size)).max() < 1e-9


def test_grid_mismatch_and_sign_convention(small_spec, wave_spec):
    with pytest.raises(DimensionError):
        build_laplacian(wave_spec, ScalarField.zeros(small_spec))
    with pytest.raises(ConstraintError, match="q0 >= 0"):
        build_laplacian(small_spec, ScalarField.constant(small_spec, -1.0), nonneg=True)


def test_smallest_eigenvalue_n31(small_es):
    assert abs(small_es.eigenvalues[0] - 2 * math.pi**2) <= 0.01 * 2 * math.pi**2
    assert math.isclose(small_es.eigenvalues[0], discrete_square_eigenvalue(1, 1, 31), rel_tol=1e-10)


def test_unit_square_first_four(wave_es):
    targets = np.array([2, 5, 5, 8]) * math.pi**2
    np.testing.assert_allclose(wave_es.eigenvalues[:4], targets, rtol=0.02)
    exact = sorted(discrete_square_eigenvalue(i, j, 63) for i in range(1, 8) for j in range(1, 8))[:16]
    np.testing.assert_allclose(wave_es.eigenvalues, exact, rtol=1e-10)


def test_eigensystem_invariants(wave_es, wave_spec):
    dv = wave_spec.cell_volume
    M = wave_es.modes.reshape(16, -1)
    assert np.max(np.abs(dv * M @ M.T - np.eye(16))) <= 1e-10
    assert np.all(wave_es.residuals <= 1e-8 * wave_es.eigenvalues)
    assert np.all(np.diff(wave_es.eigenvalues) >= -1e-9)
    for k in range(16):
        v = M[k]
        first = v[np.abs(v) > 1e-8 * np.abs(v).max()][0]
        assert first > 0


def test_interval_modes_are_sines():
    spec = DomainSpec(1, (1.0,), 199, (("left", (0.0, 0.0)),), 1.0, 1e-3)
    es = eigensolve(build_laplacian(spec, ScalarField.zeros(spec)), 5)
    h = spec.h[0]
    x = spec.coords(0)
    for k in range(1, 6):
        assert math.isclose(es.eigenvalues[k - 1], 4 / h**2 * math.sin(k * math.pi * h / 2) ** 2, rel_tol=1e-10)
        ref = np.sin(k * math.pi * x) * math.sqrt(2)
        np.testing.assert_allclose(es.modes[k - 1], ref, atol=1e-8)


def test_shift_invariance(small_spec, small_es):
    shifted = eigensolve(build_laplacian(small_spec, ScalarField.constant(small_spec, 10.0)), 16)
    np.testing.assert_allclose(shifted.eigenvalues, small_es.eigenvalues + 10.0, rtol=0, atol=1e-8)
    np.testing.assert_allclose(shifted.modes, small_es.modes, atol=1e-8)


def test_eigensolve_is_deterministic(small_spec, small_es):
    again = eigensolve(build_laplacian(small_spec, ScalarField.zeros(small_spec)), 16)
    assert np.array_equal(again.modes, small_es.modes)


def test_weyl_fit():
    spec = DomainSpec(1, (1.0,), 400, (("left", (0.0, 0.0)),), 1.0, 1e-3)
    es = eigensolve(build_laplacian(spec, ScalarField.zeros(spec)), 12)
    assert abs(weyl_fit(es) - math.pi**2) < 0.01 * math.pi**2
    big = DomainSpec(1, (2.0,), 400, (("left", (0.0, 0.0)),), 1.0, 1e-3)
    es2 = eigensolve(build_laplacian(big, ScalarField.zeros(big)), 12)
    assert weyl_fit(es2) > 1 and weyl_fit(es2) != weyl_fit(es)
    with pytest.raises(ConfigurationError):
        weyl_fit(eigensolve(build_laplacian(spec, ScalarField.zeros(spec)), 5))


def test_weyl_sandwich_square():
    spec = unit_square(31)
    es = eigensolve(build_laplacian(spec, ScalarField.zeros(spec)), 20)
    c = weyl_fit(es)
    k = np.arange(1, 21)
    assert math.isfinite(c) and c > 1
    assert np.all(k / c <= es.eigenvalues * (1 + 1e-12)) and np.all(es.eigenvalues <= c * k * (1 + 1e-12))


def test_norms_of_first_mode(wave_es):
    phi = wave_es.field(1)
    lam = wave_es.eigenvalues[0]
    assert math.isclose(norm(phi), 1.0, rel_tol=1e-10)
    assert math.isclose(norm(phi, "H_minus1", wave_es), lam**-0.5, rel_tol=1e-10)
    assert math.isclose(norm(phi, "H_minus1"), lam**-0.5, rel_tol=1e-8)
    assert math.isclose(norm(phi, "H1_0") ** 2, lam, rel_tol=1e-10)
    assert math.isclose(norm(phi, "H_Delta_cal"), math.sqrt(lam) + lam, rel_tol=1e-8)
    zero = ScalarField.zeros(wave_es.spec)
    for kind in ("L2", "H1_0", "H_Delta_cal", "H0_cal"):
        assert norm(zero, kind) == 0.0
    assert norm(zero, "H_minus1", wave_es) == 0.0
    with pytest.raises(ValueError):
        norm(phi, "H2")


def test_truncated_h_minus1_warns(small_es):
    bumpy = ScalarField.from_function(small_es.spec, lambda x, y: np.sin(9 * np.pi * x) * np.sin(9 * np.pi * y))
    with pytest.warns(TruncationWarning):
        norm(bumpy, "H_minus1", small_es)


def test_spectral_interpolation(small_spec):
    es = eigensolve(build_laplacian(small_spec, ScalarField.zeros(small_spec)), small_spec.size)
    rng = np.random.default_rng(3)
    v = ScalarField(small_spec, rng.standard_normal(small_spec.size))
    c = es.coefficients(v)
    lhs = norm(v) ** 2
    rhs = math.sqrt(np.sum(es.eigenvalues * c * c) * np.sum(c * c / es.eigenvalues))
    assert lhs <= rhs
    assert math.isclose(np.sum(c * c), lhs, rel_tol=1e-10)
    phi = es.field(3)
    c = es.coefficients(phi)
    eq = math.sqrt(np.sum(es.eigenvalues * c * c) * np.sum(c * c / es.eigenvalues))
    assert math.isclose(norm(phi) ** 2, eq, rel_tol=1e-9)


def test_parseval_partial_sums(wave_es, wave_spec):
    v = random_potential(wave_spec, 11)
    assert np.sum(wave_es.coefficients(v) ** 2) <= norm(v) ** 2


def test_field_is_immutable_and_bound_checked(small_spec):
    q = ScalarField.constant(small_spec, 2.0)
    with pytest.raises(ValueError):
        q.values[0, 0] = 1.0
    with pytest.raises(ConstraintError) as info:
        q.check_bound(1.0)
    assert info.value.constraint == "|q|_inf <= m"
    with pytest.raises(ValueError):
        ScalarField(small_spec, np.full(small_spec.size, np.nan))


def test_w1inf_norm_linear_field(small_spec):
    f = ScalarField.from_function(small_spec, lambda x, y: 0.5 * x + 0 * y)
    assert math.isclose(w1inf_norm(f), 0.5, rel_tol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=16, max_size=16))
def test_synthesis_roundtrip(coeffs):
    spec = unit_square(15, tau=0.1, dt=1e-2)
    es = _small_es(spec)
    v = es.synthesize(coeffs)
    np.testing.assert_allclose(es.coefficients(v), coeffs, atol=1e-10)
    assert math.isclose(spectral_h1(v, es) ** 2, float(np.sum(es.eigenvalues * np.square(coeffs))),
                        rel_tol=1e-9, abs_tol=1e-12)


_CACHE = {}


def _small_es(spec):
    if spec not in _CACHE:
        _CACHE[spec] = eigensolve(build_laplacian(spec, ScalarField.zeros(spec)), 16)
    return _CACHE[spec]
