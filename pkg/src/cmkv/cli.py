"""Command line experiment runner: ``cmkv <command> ...``.

Commands::

    simulate finite|limit|multipop   trajectories, one CSV per replication
    picard                           Picard gaps under frozen noise
    mgtest                           martingale-problem residual for one test function
    study convergence|covariation|moments

``--model`` takes a JSON config file or the name of a builtin model.
Exit codes: 0 success, 2 configuration error, 3 numerical abort.
Replications run on a process pool of ``--jobs`` workers; outputs are
always collected and written in replication order, and
``CMKV_DETERMINISTIC=1`` runs everything in the calling process.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .diagnostics import (
    aggregate_covariation,
    convergence_replication,
    estimate_covariation,
    moment_audit_samples,
    sup_square,
    summarize_convergence,
)
from .finite_system import FiniteSimConfig, simulate_finite
from .generator import BUILTIN_TESTS, martingale_residuals
from .limit_system import LimitSimConfig, simulate_limit
from .model import BUILTIN_MODELS, ModelError, NumericalAbort, build_model
from .multipop import build_multipop, simulate_multipop_finite, simulate_multipop_limit
from .noise import parse_seed
from .output import (
    config_hash,
    header_lines,
    jump_log_csv,
    table_csv,
    trajectory_csv,
    write_manifest,
    write_text_atomic,
)
from .picard import picard_solve

__all__ = ["run", "main", "load_config"]

EXIT_OK, EXIT_CONFIG, EXIT_ABORT = 0, 2, 3


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: error: {message}")


def load_config(ref: str) -> dict:
    """A JSON file path, or a builtin model name."""
    path = Path(ref)
    if path.is_file():
        try:
            return json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{ref}: invalid JSON: {exc}") from None
    if ref in BUILTIN_MODELS:
        return {"model": ref}
    raise ConfigError(f"--model {ref!r} is neither a readable file nor a builtin ({', '.join(BUILTIN_MODELS)})")


def _parse_float_list(text: str) -> list:
    return [float(v) for v in text.split(",") if v.strip()]


def _parse_int_list(text: str) -> list:
    return [int(v) for v in text.split(",") if v.strip()]


def _seed(text: str) -> int:
    try:
        return parse_seed(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _common(p, *, size=None, reps=True, out=True, t_default=1.0):
    p.add_argument("--model", required=True, help="JSON config file or builtin model name")
    if size == "n":
        p.add_argument("--n", type=int, required=True, help="number of particles")
    elif size == "m":
        p.add_argument("--m", type=int, required=True, help="number of limit copies")
    p.add_argument("--t", type=float, default=t_default, help="horizon T")
    p.add_argument("--dt", type=float, default=None, help="step size (default T/1000)")
    p.add_argument("--seed", type=_seed, default=0, help="root seed, decimal or 0x-hex")
    if reps:
        p.add_argument("--reps", type=int, default=1, help="number of replications")
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default: logical cores)")
    if out:
        p.add_argument("--out", required=True, help="output directory or file")
    p.add_argument("--grid", type=_parse_float_list, default=None,
                   help="comma-separated output times (default: every step)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cmkv", description="Particle systems with simultaneous jumps and their limits.")
    parser.add_argument("--version", action="version", version=f"cmkv {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="simulate trajectories")
    simsub = sim.add_subparsers(dest="system", required=True, parser_class=_Parser)
    p = simsub.add_parser("finite", help="N-particle system")
    _common(p, size="n")
    p.add_argument("--jump-log", action="store_true", help="also write the jump log CSV")
    p = simsub.add_parser("limit", help="M-copy limit system")
    _common(p, size="m")
    p.add_argument("--v-atoms", type=int, default=64)
    p = simsub.add_parser("multipop", help="multi-population system")
    _common(p)
    p.add_argument("--system", dest="mp_system", choices=("finite", "limit"), default="finite")
    p.add_argument("--n", type=int, default=None, help="override every population size")
    p.add_argument("--jump-log", action="store_true")

    p = sub.add_parser("picard", help="Picard iteration under frozen noise")
    _common(p, size="m", reps=False)
    p.add_argument("--iters", type=int, default=8)

    p = sub.add_parser("mgtest", help="martingale-problem residual")
    _common(p, size="m", out=False, t_default=None)
    p.add_argument("--g", choices=sorted(BUILTIN_TESTS), required=True, help="builtin test function")
    p.add_argument("--s", type=float, default=0.0, help="start time s")
    p.add_argument("--horizon", type=float, default=None, help="simulation horizon (default: t)")
    p.add_argument("--out", default=None, help="optional CSV of per-replication residuals")

    study = sub.add_parser("study", help="cross-system studies")
    stsub = study.add_subparsers(dest="study", required=True, parser_class=_Parser)
    p = stsub.add_parser("convergence", help="median W2 between finite and limit laws")
    _common(p)
    p.add_argument("--n-list", type=_parse_int_list, default=[25, 50, 100, 200])
    p.add_argument("--m-limit", type=int, default=1000)
    p.add_argument("--limit-seed", type=_seed, default=None)
    p = stsub.add_parser("covariation", help="realized vs predicted covariation")
    _common(p, size="n")
    p.add_argument("--pair", type=_parse_int_list, default=[0, 1])
    p = stsub.add_parser("moments", help="E sup |X^1|^2 across N")
    _common(p)
    p.add_argument("--n-list", type=_parse_int_list, default=[25, 50, 100, 200, 400])
    return parser


# --------------------------------------------------------------------------- workers
# Model closures are not picklable, so workers receive the config tree and
# rebuild the model themselves.

def _finite_task(args):
    cfg, n, T, dt, seed, rep, grid, jump_log = args
    b = simulate_finite(FiniteSimConfig(build_model(cfg), n, T, dt, seed, jump_log, grid, rep))
    return b


def _limit_task(args):
    cfg, m, T, dt, seed, rep, grid, v_atoms = args
    return simulate_limit(LimitSimConfig(build_model(cfg), m, T, dt, seed, grid, v_atoms, rep))


def _multipop_task(args):
    cfg, system, T, dt, seed, rep, grid, jump_log = args
    spec = build_multipop(cfg)
    if system == "limit":
        return simulate_multipop_limit(spec, T, dt, seed, replication=rep, output_grid=grid)
    return simulate_multipop_finite(spec, T, dt, seed, replication=rep, record_jump_log=jump_log, output_grid=grid)


def _mg_task(args):
    cfg, g, s, t, m, T, dt, seed, rep = args
    model = build_model(cfg)
    lcfg = LimitSimConfig(model, m, T, dt, seed, replication=rep)
    return float(martingale_residuals(model, BUILTIN_TESTS[g], s, t, lcfg, replications=[rep])[0])


def _convergence_task(args):
    cfg, n_list, m_limit, T, dt, seed, lseed, rep = args
    return convergence_replication(build_model(cfg), n_list, m_limit, T, dt, seed, lseed, rep)


def _covariation_task(args):
    cfg, n, T, dt, seed, rep, pair = args
    model = build_model(cfg)
    b = simulate_finite(FiniteSimConfig(model, n, T, dt, seed, True, [T], rep))
    return estimate_covariation(b, pair, model)


def _moment_task(args):
    cfg, n, T, dt, seed, rep = args
    b = simulate_finite(FiniteSimConfig(build_model(cfg), n, T, dt, seed, False, None, rep))
    return n, sup_square(b)


def _jobs(requested) -> int:
    if os.environ.get("CMKV_DETERMINISTIC") == "1":
        return 1
    return max(1, requested if requested else (os.cpu_count() or 1))


def _map(fn, tasks, jobs):
    """Results in task order regardless of scheduling."""
    tasks = list(tasks)
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


# --------------------------------------------------------------------------- commands

def _versions() -> dict:
    try:
        dist = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        dist = None
    return {"cmkv": __version__, "distribution": dist, "numpy": np.__version__,
            "scipy": scipy.__version__, "python": platform.python_version()}


class _Run:
    """Bookkeeping for one invocation: hash, headers, outputs, manifest."""

    def __init__(self, module: str, config: dict, params: dict, seed: int):
        self.module = module
        self.seed = seed
        self.hash = config_hash({"module": module, "config": config, "params": params, "seed": seed})
        self.params = params
        self.outputs: list = []
        self.started = time.perf_counter()

    def header(self, **extra) -> list:
        return header_lines(self.hash, self.seed, module=self.module, **extra)

    def write(self, path, text):
        write_text_atomic(path, text)
        self.outputs.append(str(path))

    def manifest(self, path, **extra):
        write_manifest(path, {
            "config_hash": self.hash,
            "seed": self.seed,
            "module": self.module,
            "params": self.params,
            "versions": _versions(),
            "wall_clock_s": round(time.perf_counter() - self.started, 3),
            "outputs": self.outputs,
            **extra,
        })


def _cmd_simulate(a) -> int:
    cfg = load_config(a.model)
    out = Path(a.out)
    jobs = _jobs(a.jobs)
    if a.system == "finite":
        build_model(cfg).centering  # validate before spawning workers
        params = {"N": a.n, "T": a.t, "dt": a.dt, "reps": a.reps, "grid": a.grid}
        run = _Run("simulate finite", cfg, params, a.seed)
        tasks = [(cfg, a.n, a.t, a.dt, a.seed, r, a.grid, a.jump_log) for r in range(a.reps)]
        for r, b in enumerate(_map(_finite_task, tasks, jobs)):
            run.write(out / f"rep_{r:04d}.csv", trajectory_csv(run.header(replication=r), b.times, b.states))
            if a.jump_log:
                run.write(out / f"jumps_{r:04d}.csv", jump_log_csv(run.header(replication=r), b.jump_log))
    elif a.system == "limit":
        build_model(cfg)
        params = {"M": a.m, "T": a.t, "dt": a.dt, "reps": a.reps, "grid": a.grid, "v_atoms": a.v_atoms}
        run = _Run("simulate limit", cfg, params, a.seed)
        tasks = [(cfg, a.m, a.t, a.dt, a.seed, r, a.grid, a.v_atoms) for r in range(a.reps)]
        meta = None
        for r, b in enumerate(_map(_limit_task, tasks, jobs)):
            meta = b.meta
            run.write(out / f"rep_{r:04d}.csv", trajectory_csv(run.header(replication=r), b.times, b.states))
        run.manifest(out / "manifest.json", idio_path=meta["idio_path"] if meta else None)
        return EXIT_OK
    else:
        if a.n is not None:
            cfg = dict(cfg, populations=[dict(p, size=a.n) for p in cfg.get("populations", [])])
        build_multipop(cfg)
        params = {"system": a.mp_system, "T": a.t, "dt": a.dt, "reps": a.reps, "grid": a.grid}
        run = _Run("simulate multipop", cfg, params, a.seed)
        tasks = [(cfg, a.mp_system, a.t, a.dt, a.seed, r, a.grid, a.jump_log) for r in range(a.reps)]
        for r, bundles in enumerate(_map(_multipop_task, tasks, jobs)):
            for k, b in enumerate(bundles):
                hdr = run.header(replication=r, population=k + 1)
                run.write(out / f"rep_{r:04d}_pop_{k + 1}.csv", trajectory_csv(hdr, b.times, b.states))
                if a.jump_log and b.jump_log is not None:
                    run.write(out / f"jumps_{r:04d}_pop_{k + 1}.csv", jump_log_csv(hdr, b.jump_log, population=k))
    run.manifest(out / "manifest.json")
    return EXIT_OK


def _cmd_picard(a) -> int:
    cfg = load_config(a.model)
    model = build_model(cfg)
    params = {"M": a.m, "T": a.t, "dt": a.dt, "iters": a.iters}
    run = _Run("picard", cfg, params, a.seed)
    _, report = picard_solve(LimitSimConfig(model, a.m, a.t, a.dt, a.seed), a.iters)
    out = Path(a.out)
    idx = range(report.times.size) if a.grid is None else [
        int(np.argmin(np.abs(report.times - t))) for t in a.grid]
    rows = [(n, report.times[i], report.gaps[n, i]) for n in range(report.gaps.shape[0]) for i in idx]
    hdr = run.header(w2_direct=f"{report.w2_direct:.6g}", w2_independent=f"{report.w2_independent:.6g}")
    run.write(out / "gaps.csv", table_csv(hdr, ["n", "t", "u"], rows))
    run.manifest(out / "manifest.json", terminal_gaps=[float(v) for v in report.terminal_gaps])
    for n, u in enumerate(report.terminal_gaps):
        print(f"u[{n}](T) = {u:.6e}")
    return EXIT_OK


def _cmd_mgtest(a) -> int:
    cfg = load_config(a.model)
    build_model(cfg)
    if a.t is None:
        raise ConfigError("mgtest needs --t")
    T = a.horizon if a.horizon is not None else a.t
    params = {"M": a.m, "g": a.g, "s": a.s, "t": a.t, "T": T, "dt": a.dt, "reps": a.reps}
    run = _Run("mgtest", cfg, params, a.seed)
    tasks = [(cfg, a.g, a.s, a.t, a.m, T, a.dt, a.seed, r) for r in range(a.reps)]
    res = np.array(_map(_mg_task, tasks, _jobs(a.jobs)))
    mean = float(res.mean())
    se = float(res.std(ddof=1) / np.sqrt(res.size)) if res.size > 1 else float("nan")
    passed = bool(np.all(res == 0.0) or abs(mean) <= 4 * se)
    print(f"mean={mean:.6e} stderr={se:.6e} {'PASS' if passed else 'FAIL'}")
    if a.out:
        out = Path(a.out)
        run.write(out, table_csv(run.header(mean=f"{mean:.9g}", stderr=f"{se:.9g}"),
                                 ["replication", "residual"], list(enumerate(res))))
        run.manifest(out.with_suffix(".manifest.json"), mean=mean, stderr=se, passed=bool(passed))
    return EXIT_OK


def _cmd_study(a) -> int:
    cfg = load_config(a.model)
    model = build_model(cfg)
    out = Path(a.out)
    jobs = _jobs(a.jobs)
    if a.study == "convergence":
        n_list = sorted(a.n_list)
        if a.m_limit < max(n_list):
            raise ConfigError("--m-limit must be at least max(--n-list)")
        lseed = a.seed + 1 if a.limit_seed is None else a.limit_seed
        params = {"N_list": n_list, "M_limit": a.m_limit, "T": a.t, "dt": a.dt, "reps": a.reps,
                  "limit_seed": lseed}
        run = _Run("study convergence", cfg, params, a.seed)
        tasks = [(cfg, n_list, a.m_limit, a.t, a.dt, a.seed, lseed, r) for r in range(a.reps)]
        w2 = np.column_stack(_map(_convergence_task, tasks, jobs))
        rows = [(r.N, r.median_w2, r.iqr, r.reps, r.seed) for r in summarize_convergence(n_list, w2, a.seed)]
        run.write(out, table_csv(run.header(limit_seed=lseed), ["N", "median_w2", "iqr", "reps", "seed"], rows))
    elif a.study == "covariation":
        pair = tuple(a.pair)
        if len(pair) != 2 or not all(0 <= i < a.n for i in pair):
            raise ConfigError("--pair needs two particle indices below N")
        model.centering
        params = {"N": a.n, "T": a.t, "dt": a.dt, "reps": a.reps, "pair": list(pair)}
        run = _Run("study covariation", cfg, params, a.seed)
        tasks = [(cfg, a.n, a.t, a.dt, a.seed, r, pair) for r in range(a.reps)]
        est = aggregate_covariation(_map(_covariation_task, tasks, jobs))
        idx = range(est.times.size) if a.grid is None else [int(np.argmin(np.abs(est.times - t))) for t in a.grid]
        se = est.stderr if est.stderr is not None else np.full(est.times.size, np.nan)
        rows = [(est.times[i], est.realized[i], est.theoretical[i], se[i]) for i in idx]
        run.write(out, table_csv(run.header(endpoint_ratio=f"{est.endpoint_ratio:.6g}"),
                                 ["time", "realized", "theoretical", "stderr"], rows))
    else:
        n_list = sorted(a.n_list)
        params = {"N_list": n_list, "T": a.t, "dt": a.dt, "reps": a.reps}
        run = _Run("study moments", cfg, params, a.seed)
        tasks = [(cfg, n, a.t, a.dt, a.seed, r) for n in n_list for r in range(a.reps)]
        rep = moment_audit_samples(_map(_moment_task, tasks, jobs))
        rows = list(zip(rep.N.tolist(), rep.estimates, rep.stderrs))
        hdr = run.header(spearman_rho=f"{rep.spearman_rho:.6g}", p_value=f"{rep.p_value:.6g}",
                         passed=rep.passed)
        run.write(out, table_csv(hdr, ["N", "sup_sq_mean", "stderr"], rows))
        print(f"spearman rho={rep.spearman_rho:.4f} p={rep.p_value:.4f} {'PASS' if rep.passed else 'FAIL'}")
    run.manifest(out.with_suffix(".manifest.json"))
    return EXIT_OK


_COMMANDS = {"simulate": _cmd_simulate, "picard": _cmd_picard, "mgtest": _cmd_mgtest, "study": _cmd_study}


def run(argv=None) -> int:
    """Run one command; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as exc:
        print(f"numerical abort at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (ModelError, ValueError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
