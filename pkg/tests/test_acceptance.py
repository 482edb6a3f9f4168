"""The ten acceptance criteria at their stated tolerances.

Each test records its measurement; a summary line per criterion is printed at
the end of the session (see ``conftest.pytest_terminal_summary``) and, with
``-s``, as each test finishes.
"""
import math
from pathlib import Path

import numpy as np
import pytest

from logstab.cli import main, run_task
from logstab.config import load_config
from logstab.domain import DomainSpec, ScalarField, build_laplacian, eigensolve, norm
from logstab.families import random_potential, random_sine_series, sparse_mode_combination
from logstab.heat import solve_heat_ivp, spectral_decay_ratios
from logstab.schedule import StabilitySchedule, brute_force_index, schedule_sstar, sstar_residual, truncation_index
from logstab.stability import extract_coefficients, reconstruct_potential
from logstab.traces import BoundaryTrace, TimeSignal
from logstab.volterra import ConvolutionKernel, apply_S, invert_S, volterra_bound_holds
from logstab.wave import duhamel_convolve, measure_probes, probe_traces, solve_wave_ivp, solve_wave_source

from conftest import unit_square

pytestmark = pytest.mark.acceptance
CONFIG = Path(__file__).resolve().parents[1] / "configs" / "acceptance.toml"


@pytest.fixture
def criterion(record_property):
    def mark(number, title, detail):
        record_property("criterion", number)
        record_property("title", title)
        record_property("detail", detail)
        print(f"\ncriterion {number}: {title} [{detail}]")
    return mark


def rel(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def test_c01_forward_wave_fidelity(criterion, wave_spec, wave_es):
    phi = wave_es.field(1)
    zero = ScalarField.zeros(wave_spec)
    traj, _ = solve_wave_ivp(wave_spec, zero, phi, zero, snapshot_stride=250)
    omega = math.sqrt(2 * math.pi**2)
    err = max(norm(s.displacement - phi * math.cos(omega * s.time)) / norm(phi) for s in traj)
    drifts = []
    for seed in range(3):
        q = random_potential(wave_spec, 100 + seed, sup_bound=1.0)
        u0 = random_sine_series(wave_spec, 200 + seed).field(wave_spec)
        traj, _ = solve_wave_ivp(wave_spec, q, u0, zero, m=1.0)
        drifts.append(traj.energy_drift())
    criterion(1, "forward wave fidelity", f"rel L2 error {err:.2e} <= 1e-3, energy drift {max(drifts):.2e} <= 1e-4")
    assert err <= 1e-3 and max(drifts) <= 1e-4


def test_c02_duhamel_identity(criterion, wave_spec, wave_es):
    q = random_potential(wave_spec, 11, sup_bound=1.0)
    zero = ScalarField.zeros(wave_spec)
    pairs = [
        (wave_es.field(1), lambda t: np.ones_like(t)),
        (wave_es.field(2) - 0.3 * wave_es.field(4), lambda t: np.cos(3 * t)),
        (random_sine_series(wave_spec, 1).field(wave_spec), lambda t: 1 + t),
        (random_sine_series(wave_spec, 2).field(wave_spec), lambda t: np.exp(-t)),
        (random_sine_series(wave_spec, 3).field(wave_spec), lambda t: 1 + np.sin(5 * t)),
    ]
    worst = 0.0
    for f, profile in pairs:
        g = TimeSignal.from_function(wave_spec, profile)
        _, direct = solve_wave_source(wave_spec, q, f, g)
        _, base = solve_wave_ivp(wave_spec, q, zero, f)
        worst = max(worst, (direct - duhamel_convolve(base, g)).h1() / direct.h1())
    criterion(2, "Duhamel identity", f"worst rel H1 discrepancy {worst:.2e} <= 1e-2 over 5 pairs")
    assert worst <= 1e-2


def test_c03_volterra_bound(criterion):
    spec = DomainSpec(1, (1.0,), 63, (("left", (0.0, 0.0)), ("right", (0.0, 0.0))), 2.0, 1e-3)
    t = spec.times
    rng = np.random.default_rng(3)
    worst_slack, worst_trip = 0.0, 0.0
    ok = True
    for profile in (np.ones_like, np.cos, lambda s: 1 + s):
        kernel = ConvolutionKernel(TimeSignal.from_function(spec, profile))
        for _ in range(100):
            vals = np.zeros((spec.n_trace_nodes, len(t)))
            for p in range(spec.n_trace_nodes):
                for j in range(1, 9):
                    vals[p] += rng.standard_normal() * np.sin(j * t + rng.uniform(0, 2 * np.pi)) / j
            h = BoundaryTrace(spec, vals)
            holds, lhs, rhs = volterra_bound_holds(kernel, h, slack=0.05)
            ok &= holds
            worst_slack = max(worst_slack, lhs / rhs)
            trip = np.max(np.abs(invert_S(kernel, apply_S(kernel, h)).values - vals)) / np.max(np.abs(vals))
            worst_trip = max(worst_trip, trip)
    criterion(3, "Volterra bound", f"max lhs/rhs {worst_slack:.3f} <= 1.05, round trip {worst_trip:.1e} <= 1e-6")
    assert ok and worst_trip <= 1e-6


def test_c04_heat_exactness(criterion, heat_spec, heat_es):
    worst = 0.0
    for k in range(1, 5):
        phi = heat_es.field(k)
        _, trace, _ = solve_heat_ivp(heat_spec, heat_es.q0, phi)
        exact = np.outer(heat_spec.trace_matrix @ phi.flat, np.exp(-heat_es.eigenvalues[k - 1] * heat_spec.times))
        worst = max(worst, rel(trace.values, exact))
    criterion(4, "heat exactness", f"worst rel trace error {worst:.2e} <= 1e-3 for k <= 4")
    assert worst <= 1e-3


@pytest.mark.slow
def test_c05_weyl_bounds(criterion):
    K = 100
    k = np.arange(1, K + 1)
    consts, sandwich = {}, True
    for Ng in (63, 127):
        spec = unit_square(Ng)
        for label, q0 in (("zero", ScalarField.zeros(spec)),
                          ("random", random_potential(spec, 5, sup_bound=5.0, nonneg=True))):
            es = eigensolve(build_laplacian(spec, q0, nonneg=True), K)
            c = es.weyl_constant
            sandwich &= bool(np.all(k / c <= es.eigenvalues * (1 + 1e-12)) and np.all(es.eigenvalues <= c * k * (1 + 1e-12)))
            consts[(Ng, label)] = c
    change = max(abs(consts[(127, l)] / consts[(63, l)] - 1) for l in ("zero", "random"))
    criterion(5, "Weyl bounds", f"two-sided bound for k <= 100: {sandwich}, c change under refinement {change:.2%} <= 10%")
    assert sandwich and change <= 0.1


def test_c06_spectral_decay(criterion, heat_spec):
    q = random_potential(heat_spec, 21, sup_bound=1.0, nonneg=True)
    es = eigensolve(build_laplacian(heat_spec, q, nonneg=True), 16)
    worst = max(float(np.max(spectral_decay_ratios(heat_spec, q, random_sine_series(heat_spec, 300 + i).field(heat_spec), es)))
                for i in range(20))
    criterion(6, "spectral decay", f"max ratio {worst:.4f} <= 1.1 over 20 sources, l <= 16")
    assert worst <= 1.1


def test_c07_reconstruction_oracle(criterion, wave_spec, wave_es, wave_born):
    ks = range(1, 17)
    sched = StabilitySchedule.from_eigensystem(wave_es, 1.0)

    def coeffs(dq):
        q = wave_es.q0 + dq
        probes = measure_probes(wave_spec, q, wave_es.q0, wave_es, ks, measured=probe_traces(wave_spec, q, wave_es, ks))
        return extract_coefficients(probes, wave_es, dictionary=wave_born)

    dq = sparse_mode_combination(wave_es, {1: 0.1, 3: 0.05})
    full, half = coeffs(dq), coeffs(0.5 * dq)
    _, rec = reconstruct_potential(full, wave_es, 0.0, sched, truth=dq)
    err = rec.error / norm(dq)
    lin = max(abs(half[k] / full[k] - 0.5) / 0.5 for k in (0, 2))
    criterion(7, "reconstruction oracle", f"rel L2 error {err:.2e} <= 0.1, linearity deviation {lin:.2e} <= 0.05")
    assert err <= 0.1 and lin <= 0.05


@pytest.mark.slow
def test_c08_stability_modulus_fit(criterion):
    config = load_config(CONFIG)
    summary, ok = [], True
    for i, exp in enumerate(config.experiments):
        tau = config.horizons(exp)[0]
        rep = run_task(config, i, tau)["report"]
        train_ok = len(rep.records) == 12 and all(r.error <= rep.fitted_C * r.modulus * (1 + 1e-12) for r in rep.records)
        worst = max((r.ratio / rep.fitted_C for r in rep.heldout), default=math.inf)
        ok &= train_ok and len(rep.heldout) == 4 and rep.passed
        summary.append(f"{rep.kind} C={rep.fitted_C:.3g} held-out {worst:.2f}")
    criterion(8, "stability modulus fit", "; ".join(summary) + " (held-out ratio <= 2)")
    assert ok


def test_c09_schedule_sanity(criterion, wave_es):
    sched = StabilitySchedule.from_eigensystem(wave_es, 5.0)
    s_end = schedule_sstar(sched, log_gamma=sched.log_gamma_star)
    resid = sstar_residual(sched, s_end, log_gamma=sched.log_gamma_star)
    lg_star = sched.log_gamma_star
    gammas = [math.exp(lg_star + d) for d in np.linspace(-5, 5, 41) if lg_star + d < -1e-3]
    trivial_ok = all((truncation_index(sched, g, 16)[1] == "trivial") == (math.log(g) > lg_star) for g in gammas)
    grid = np.linspace(-sched.log_chi(6.0), lg_star, 50)
    gap = max(abs(math.floor(schedule_sstar(sched, log_gamma=lg)) - brute_force_index(sched, lg)) for lg in grid)
    criterion(9, "schedule sanity", f"s*(gamma*) = {s_end}, residual {resid:.1e}, trivial iff gamma > gamma*: "
                                    f"{trivial_ok}, max index gap {gap} <= 1")
    assert s_end == 1.0 and resid <= 1e-9 and trivial_ok and gap <= 1


@pytest.mark.slow
def test_c10_determinism(criterion, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    codes = [main([str(CONFIG), "--out", str(a)]), main([str(CONFIG), "--out", str(b)])]
    csvs = sorted(p.name for p in a.glob("*.csv"))
    same = [name for name in csvs if (a / name).read_bytes() == (b / name).read_bytes()]
    criterion(10, "determinism", f"{len(same)}/{len(csvs)} CSVs byte-identical, exit codes {codes}")
    assert csvs and len(same) == len(csvs) and codes == [0, 0]
