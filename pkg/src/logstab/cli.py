"""Batch runner: ``logstab CONFIG [--out DIR] [--seed N] [--jobs N] [--strict|--lenient]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 a stability fit failed its held-out validation.
"""
from __future__ import annotations

import argparse
import functools
import json
import logging
import math
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigValidationError, ExperimentConfig, ExperimentSpec, load_config
from .domain import DomainSpec, ScalarField, build_laplacian, eigensolve
from .errors import ConfigurationError, ConstraintError, LogstabError, NumericalError
from .families import Bump, default_bump, random_bumps
from .schedule import StabilitySchedule
from .stability import Member, StabilityReport, fit_observability_rate, run_stability_experiment

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_ACCEPTANCE = 0, 2, 3, 4

log = logging.getLogger("logstab")


@functools.lru_cache(maxsize=8)
def shared_eigensystem(spec: DomainSpec, q0_value: float, K: int):
    """Build-once eigensystem per ``(spec, q0, K)`` within a process."""
    q0 = ScalarField.constant(spec, q0_value, "q0")
    return eigensolve(build_laplacian(spec, q0, nonneg=True), K)


def build_family(exp: ExperimentSpec, spec: DomainSpec, es, seed: int, index: int) -> tuple:
    """``(training, heldout)`` member lists of an experiment."""
    fam = exp.family
    if fam.kind == "scaled_bump":
        base = default_bump(spec)
        center = fam.get("center")
        bump = Bump(tuple(center) if center else base.center, fam.get("radius", base.radius))
        def make(a, prefix):
            return Member(f"{prefix}alpha={a!r}", bump.scaled(a).field(spec), {"alpha": a})
        train = [make(a, "") for a in fam.get("alphas", ())]
        held = [make(a, "heldout-") for a in fam.get("heldout_alphas", ())]
    elif fam.kind == "random_bumps":
        count, extra = fam.get("count"), fam.get("heldout_count", 0)
        bumps = random_bumps(spec, count + extra, int(np.random.SeedSequence([seed, index]).generate_state(1)[0]),
                             fam.get("amplitude", 0.1))
        members = [Member(f"bump{i + 1}", b.field(spec)) for i, b in enumerate(bumps)]
        train, held = members[:count], [Member("heldout-" + mb.id, mb.field) for mb in members[count:]]
    else:
        train = [Member(f"modes{i + 1}", es.synthesize(c)) for i, c in enumerate(fam.get("coefficients", ()))]
        held = [Member(f"heldout-modes{i + 1}", es.synthesize(c))
                for i, c in enumerate(fam.get("heldout_coefficients", ()))]
    return train, held


def run_task(config: ExperimentConfig, index: int, tau: float) -> dict:
    """One (experiment, horizon) pair; returns the report plus bookkeeping."""
    exp = config.experiments[index]
    start = time.perf_counter()
    spec = config.spec(tau)
    es = shared_eigensystem(spec, exp.q0, exp.K)
    sched = StabilitySchedule.from_eigensystem(es, config.m, mu=config.mu, kappa_reading=config.kappa_reading)
    train, held = build_family(exp, spec, es, config.seed, index)
    g = exp.g.signal(spec)
    report = run_stability_experiment(exp.problem, train, sched, es, exp.noise_levels, held, g=g,
                                      seed=config.seed + index, heldout_factor=exp.heldout_factor)
    extra = {}
    if exp.problem.startswith("WAVE"):
        probes = [es.field(k) for k in range(1, min(4, es.K) + 1)] + [default_bump(spec).field(spec)]
        extra["mu_fitted"] = fit_observability_rate(spec, es.q0, probes)
    extra["mu_configured"] = config.mu
    return {"report": report, "extra": extra, "wall_time": time.perf_counter() - start}


def _task_safe(config, index, tau):
    try:
        return run_task(config, index, tau)
    except (ConfigurationError, ConstraintError) as exc:
        return {"error": str(exc), "code": EXIT_CONFIG}
    except NumericalError as exc:
        return {"error": str(exc), "code": EXIT_NUMERICAL}
    except (LogstabError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return {"error": f"{type(exc).__name__}: {exc}", "code": EXIT_NUMERICAL}


def build_id() -> str:
    """``git describe`` of the source tree, or the package version outside a checkout."""
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=10)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def plot_report(report: StabilityReport, path: Path, title: str) -> None:
    """Log-log gamma vs error with the fitted ``C * modulus`` overlay, as SVG."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from .schedule import modulus

    plt.rcParams["svg.hashsalt"] = "logstab"
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    recs = [r for r in report.records if r.gamma > 0 and r.error > 0]
    held = [r for r in report.heldout if r.gamma > 0 and r.error > 0]
    if recs:
        ax.loglog([r.gamma for r in recs], [r.error for r in recs], "o", label="training")
    if held:
        ax.loglog([r.gamma for r in held], [r.error for r in held], "s", mfc="none", label="held out")
    pts = recs + held
    if pts and math.isfinite(report.fitted_C):
        lo = min(r.gamma for r in pts)
        hi = max(r.gamma for r in pts)
        grid = np.geomspace(lo / 2, min(hi * 2, 0.9) if hi < 0.9 else hi * 2, 200)
        n = report.metadata.get("schedule", {}).get("n", 2)
        vals = [report.fitted_C * modulus(report.kind, float(x), n) for x in grid]
        ax.loglog(grid, vals, "-", lw=1, label=f"C {report.kind.lower()}(gamma)")
    ax.set_xlabel("gamma")
    ax.set_ylabel("error")
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def run(config: ExperimentConfig, out_dir: str | Path | None = None, jobs: int = 1) -> int:
    """Run every experiment of ``config``; writes CSVs, SVG plots and ``manifest.json``."""
    out = Path(out_dir if out_dir is not None else config.output)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(i, tau) for i, exp in enumerate(config.experiments) for tau in config.horizons(exp)]
    start = time.perf_counter()
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_task_safe, [config] * len(tasks), *zip(*tasks)))
    else:
        results = [_task_safe(config, i, tau) for i, tau in tasks]
    manifest = {"build": build_id(), "seed": config.seed, "config": config.raw, "experiments": [],
                "complete": True}
    code = EXIT_OK
    for (i, tau), res in zip(tasks, results):
        exp = config.experiments[i]
        j = config.horizons(exp).index(tau)
        stem = f"{exp.name}_tau{j + 1}"
        entry = {"name": exp.name, "problem": exp.problem, "tau": tau}
        if "error" in res:
            entry.update(status="failed", error=res["error"])
            manifest["complete"] = False
            code = max(code, res["code"]) if code != EXIT_CONFIG else code
            log.error("%s (tau=%g) failed: %s", exp.name, tau, res["error"])
        else:
            rep = res["report"]
            rep.to_csv(out / f"{stem}.csv")
            plot_report(rep, out / f"{stem}.svg", f"{exp.name}, tau = {tau:g}")
            entry.update(status="ok", csv=f"{stem}.csv", plot=f"{stem}.svg", modulus=rep.kind,
                         fitted_C=rep.fitted_C, passed=rep.passed, wall_time=res["wall_time"], **res["extra"],
                         schedule=rep.metadata["schedule"])
            log.info("%s tau=%g: C=%.6g pass=%s", exp.name, tau, rep.fitted_C, rep.passed)
            if not rep.passed and code == EXIT_OK:
                code = EXIT_ACCEPTANCE
        manifest["experiments"].append(entry)
    manifest["wall_time"] = time.perf_counter() - start
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n",
                                       encoding="utf-8")
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="logstab", description="Run logarithmic-stability experiments from a TOML file.")
    p.add_argument("config", help="experiment configuration (TOML)")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides the config)")
    p.add_argument("--seed", type=int, help="random seed (overrides the config)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--strict", dest="strict", action="store_true", default=True,
                      help="unknown configuration keys are errors (default)")
    mode.add_argument("--lenient", dest="strict", action="store_false", help="ignore unknown keys with a warning")
    p.add_argument("--list-experiments", action="store_true", help="print the experiments and exit")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        config = load_config(args.config, strict=args.strict)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigValidationError([f"--seed: must lie in [0, 2^64), got {args.seed}"])
            config = config.with_seed(args.seed)
    except ConfigValidationError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    if args.jobs < 1:
        print("--jobs: must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.list_experiments:
        for exp in config.experiments:
            taus = ", ".join(f"{t:g}" for t in config.horizons(exp))
            print(f"{exp.name}\t{exp.problem}\tK={exp.K}\ttau=[{taus}]")
        return EXIT_OK
    code = run(config, args.out, args.jobs)
    if code == EXIT_ACCEPTANCE:
        print("stability fit failed held-out validation", file=sys.stderr)
    elif code != EXIT_OK:
        print("some experiments failed; see manifest.json", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
