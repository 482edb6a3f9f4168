import math

import numpy as np
import pytest

from logstab.domain import ScalarField, norm
from logstab.errors import ConfigurationError, ConstraintError
from logstab.families import Bump, default_bump, random_sine_series, sparse_mode_combination
from logstab.heat import solve_heat_source
from logstab.schedule import StabilitySchedule, coefficient_envelope, modulus
from logstab.stability import (
    Member, StabilityRecord, born_dictionary, check_member, estimate_source, extract_coefficients,
    fit_observability_rate, opnorm_surrogate, reconstruct_potential, run_stability_experiment,
)
from logstab.traces import BoundaryTrace, TimeSignal, inject_noise
from logstab.wave import measure_probes, probe_traces, solve_wave_source


def sched_for(es, m=1.0):
    return StabilitySchedule.from_eigensystem(es, m)


def noisy_after_start(clean, level, seed):
    """Seeded noise on every sample but t = 0, where the data are known exactly."""
    vals = inject_noise(clean, level, seed).values.copy()
    vals[:, 0] = clean.values[:, 0]
    return BoundaryTrace(clean.spec, vals)


def probes_for(es, dq, ks, noise=0.0, seed=0):
    spec, q0 = es.spec, es.q0
    q = q0 + dq
    measured = probe_traces(spec, q, es, ks)
    if noise:
        measured = [noisy_after_start(t, noise, [seed, k]) for k, t in zip(ks, measured)]
    return measure_probes(spec, q, q0, es, ks, measured=measured)


@pytest.fixture(scope="module")
def manufactured(wave_es):
    return sparse_mode_combination(wave_es, {1: 0.1, 3: 0.05})


# ---- operator-norm surrogate

def test_opnorm_zero_at_background(small_es):
    probes = probes_for(small_es, ScalarField.zeros(small_es.spec), range(1, 5))
    assert opnorm_surrogate(probes) == 0.0


def test_opnorm_monotone_in_probe_set(small_es):
    dq = default_bump(small_es.spec).scaled(0.05).field(small_es.spec)
    probes = probes_for(small_es, dq, range(1, 17))
    values = [opnorm_surrogate(probes[:k]) for k in range(1, 17)]
    assert np.all(np.diff(values) >= 0)
    g8, g16 = values[7], values[15]
    assert g8 > 0 and g16 / g8 <= 3.0
    with pytest.raises(ConfigurationError):
        opnorm_surrogate([])


# ---- coefficient extraction

def test_extract_zero(small_es):
    probes = probes_for(small_es, ScalarField.zeros(small_es.spec), range(1, 5))
    assert np.all(extract_coefficients(probes, small_es) == 0.0)


def test_extract_single_mode(wave_es, wave_born):
    dq = sparse_mode_combination(wave_es, {1: 0.1})
    c = extract_coefficients(probes_for(wave_es, dq, range(1, 9)), wave_es, dictionary=wave_born)
    assert len(c) == 8
    assert abs(c[0] - 0.1) <= 0.005
    assert np.max(np.abs(c[1:])) <= 0.01


def test_extract_linear_response(wave_es, wave_born, manufactured):
    ks = range(1, 17)
    full = extract_coefficients(probes_for(wave_es, manufactured, ks), wave_es, dictionary=wave_born)
    half = extract_coefficients(probes_for(wave_es, 0.5 * manufactured, ks), wave_es, dictionary=wave_born)
    for k in (0, 2):
        assert abs(half[k] / full[k] - 0.5) <= 0.025


def test_extract_requires_ordered_probes(small_es):
    probes = probes_for(small_es, ScalarField.zeros(small_es.spec), [2, 1])
    with pytest.raises(ConfigurationError):
        extract_coefficients(probes, small_es)


# ---- reconstruction

def test_reconstruction_noise_free(wave_es, wave_born, manufactured):
    c = extract_coefficients(probes_for(wave_es, manufactured, range(1, 17)), wave_es, dictionary=wave_born)
    est, rec = reconstruct_potential(c, wave_es, 0.0, sched_for(wave_es), truth=manufactured)
    assert rec.branch == "exact" and rec.extras["N"] == 16
    assert rec.error <= 0.1 * norm(manufactured)
    assert norm(est - manufactured) == pytest.approx(rec.error)


def test_trivial_branch_returns_zero(small_es):
    sched = sched_for(small_es)
    c = np.linspace(1, 2, 16)
    est, rec = reconstruct_potential(c, small_es, 0.5, sched)
    assert rec.branch == "trivial" and rec.extras["N"] == 0
    assert np.all(est.values == 0.0)
    assert math.isnan(rec.error)
    with pytest.raises(ConfigurationError):
        reconstruct_potential(c, small_es, 0.5, sched, N=17)


def test_reconstruction_noise_sweep(wave_es, wave_born, manufactured):
    ks = range(1, 17)
    errors = []
    for level in (1e-2, 1e-3, 1e-4):
        probes = probes_for(wave_es, manufactured, ks, noise=level, seed=3)
        c = extract_coefficients(probes, wave_es, dictionary=wave_born)
        _, rec = reconstruct_potential(c, wave_es, level, sched_for(wave_es), truth=manufactured, N=4)
        assert rec.branch == "fixed"
        errors.append(rec.error)
    assert all(b <= 1.2 * a for a, b in zip(errors, errors[1:]))
    assert errors[-1] < errors[0]


# ---- source estimation

def test_source_zero(small_es):
    spec = small_es.spec
    f_hat, rec = estimate_source(BoundaryTrace.zeros(spec), small_es.q0, TimeSignal.constant(spec),
                                 sched_for(small_es), small_es, truth=ScalarField.zeros(spec))
    assert np.all(f_hat.values == 0.0)
    assert rec.gamma == 0.0 and rec.error == 0.0


def test_wave_source_single_mode(wave_es):
    spec = wave_es.spec
    f = wave_es.field(2)
    g = TimeSignal.from_function(spec, lambda t: 1 + t)
    trace = solve_wave_source(spec, wave_es.q0, f, g)[1]
    f_hat, rec = estimate_source(trace, wave_es.q0, g, sched_for(wave_es), wave_es, truth=f)
    assert rec.error <= 0.1 * norm(f, "H_minus1", wave_es)


def test_heat_source_family_fit(heat_es):
    spec = heat_es.spec
    sched = sched_for(heat_es, m=10.0)
    g = TimeSignal.constant(spec)
    members = [random_sine_series(spec, seed, sup_bound=0.5).field(spec) for seed in range(12)]
    records = []
    for i, f in enumerate(members):
        check_member("HEAT_SOURCE", Member(str(i), f), sched.m)
        clean = solve_heat_source(spec, heat_es.q0, f, g)[1]
        level = (1e-2, 1e-3, 1e-4)[i % 3]
        noisy = noisy_after_start(clean, level, i)
        _, rec = estimate_source(noisy, heat_es.q0, g, sched, heat_es, "HEAT_SOURCE", noise_level=level, truth=f)
        records.append(StabilityRecord(rec.id, rec.gamma, rec.error, modulus("PHI", rec.gamma, 2), rec.branch))
    C = max(r.ratio for r in records[:8])
    assert 0 < C < math.inf
    assert all(r.ratio <= 2 * C for r in records[8:])


# ---- experiments

def test_constraint_rejection(small_es):
    spec = small_es.spec
    sharp = Bump((0.5, 0.5), 0.05, 0.5).field(spec)
    with pytest.raises(ConstraintError) as info:
        check_member("WAVE_POTENTIAL", Member("sharp", sharp), 1.0, small_es.q0)
    assert info.value.constraint == "q - q0 in mB_W1inf"
    with pytest.raises(ConstraintError) as info:
        check_member("WAVE_POTENTIAL", Member("x", sharp), 1.0, ScalarField.constant(spec, -0.1))
    assert info.value.constraint == "q0 >= 0"
    with pytest.raises(ConstraintError) as info:
        check_member("WAVE_SOURCE", Member("big", ScalarField.constant(spec, 5.0)), 1.0)
    assert info.value.constraint == "f in mB_L2"
    with pytest.raises(ConstraintError) as info:
        run_stability_experiment("WAVE_POTENTIAL", [sharp], sched_for(small_es), small_es)
    assert "mB_W1inf" in str(info.value)


def test_experiment_argument_errors(small_es):
    spec = small_es.spec
    with pytest.raises(ConfigurationError, match="family empty"):
        run_stability_experiment("WAVE_SOURCE", [], sched_for(small_es), small_es)
    with pytest.raises(ConfigurationError, match="g\\(0\\)"):
        run_stability_experiment("WAVE_SOURCE", [small_es.field(1)], sched_for(small_es), small_es,
                                 g=TimeSignal.from_function(spec, np.sin))


def test_identical_pair_never_dominates(small_es):
    spec = small_es.spec
    bump = default_bump(spec)
    family = [Member("same", ScalarField.zeros(spec)), Member("b", bump.scaled(0.1).field(spec))]
    rep = run_stability_experiment("WAVE_POTENTIAL", family, sched_for(small_es), small_es, K=4)
    same = rep.records[0]
    assert same.gamma == 0.0 and same.error == 0.0 and same.ratio == 0.0
    assert rep.fitted_C == rep.records[1].ratio > 0


def test_source_experiment_holds(small_es):
    spec = small_es.spec
    family = [small_es.field(k) * 0.5 for k in (1, 2, 3)]
    held = [small_es.field(4) * 0.5]
    rep = run_stability_experiment("WAVE_SOURCE", family, sched_for(small_es), small_es,
                                   noise_levels=(1e-2, 1e-3), heldout=held, seed=4)
    assert len(rep.records) == 6 and len(rep.heldout) == 1
    assert rep.holds() and rep.passed
    rep2 = run_stability_experiment("WAVE_SOURCE", family, sched_for(small_es), small_es,
                                    noise_levels=(1e-2, 1e-3), heldout=held, seed=4)
    assert [r.gamma for r in rep.records] == [r.gamma for r in rep2.records]


@pytest.mark.xfail(strict=True, reason=(
    "noise-free data gap is Lipschitz in the perturbation, so log e against log|ln gamma| has slope "
    "about -|ln gamma| rather than the modulus exponent; the modulus is an upper bound, not a rate"))
def test_loglog_slope_matches_modulus(small_es):
    spec = small_es.spec
    bump = default_bump(spec)
    family = [bump.scaled(a).field(spec) for a in (0.2, 0.1, 0.05, 0.025)]
    rep = run_stability_experiment("WAVE_POTENTIAL", family, sched_for(small_es), small_es, K=4)
    x = np.log([abs(math.log(r.gamma)) for r in rep.records])
    y = np.log([r.error for r in rep.records])
    slope = np.polyfit(x, y, 1)[0]
    target = -1.0 / (8 + 2 * spec.dimension)
    assert abs(slope - target) <= 0.5 * abs(target)


def test_coefficient_envelope_fit(small_es):
    spec = small_es.spec
    sched = sched_for(small_es)
    bump = default_bump(spec)
    K = 8
    eps_grid = np.geomspace(1.0, 100.0, 5)

    def ratios(alpha):
        dq = bump.scaled(alpha).field(spec)
        gamma = opnorm_surrogate(probes_for(small_es, dq, range(1, K + 1)))
        c = small_es.coefficients(dq)[:K]
        return [abs(c[k - 1]) / coefficient_envelope(sched, k, e, gamma) for k in range(1, K + 1) for e in eps_grid]

    C = max(max(ratios(a)) for a in (0.2, 0.05))
    assert 0 < C < math.inf
    assert max(ratios(0.1)) <= 2 * C


def test_observability_rate(small_es):
    spec = small_es.spec
    family = [small_es.field(k) for k in (1, 2, 3)] + [default_bump(spec).field(spec)]
    mu = fit_observability_rate(spec, small_es.q0, family)
    assert 0 <= mu < math.inf
    assert fit_observability_rate(spec, small_es.q0, family[:1]) <= mu
