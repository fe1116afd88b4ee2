"""Command-line front end: ``lowtfr fit | project | validate``.

Every run writes ``manifest.json`` into ``--out-dir`` (also on failure) next
to the ``chains/``, ``projections/`` and ``reports/`` subdirectories.

Exit status: 0 success, 1 computational failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import FIVE_YEAR, MODES, DataError, fixture_path, read_tfr_csv
from .diagnostics import gelman_rubin
from .mcmc import ChainFileError, McmcError, pool_level_names, read_chainset, write_chainset
from .phases import DEFAULT_PHASE3_THRESHOLD, classify_phases
from .pipeline import PipelineConfig, fit
from .projection import ConvergenceError, ProjectionError, fan_csv, horizon_to, project
from .validation import ValidationError, cross_validate, fit_diagnostics

logger = logging.getLogger("lowtfr")

EXIT_OK, EXIT_COMPUTE, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    """Bad or missing input supplied by the user."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


# --------------------------------------------------------------------------
# argument parsing

def _add_data_args(p):
    p.add_argument("--input", default=None,
                   help="TFR CSV (country_id,country_name,year,tfr); default: bundled fixture")
    p.add_argument("--mode", choices=MODES, default=FIVE_YEAR)
    p.add_argument("--out-dir", default="lowtfr-out")
    p.add_argument("--seed", type=int, default=20220101)
    p.add_argument("--phase3-threshold", type=float, default=DEFAULT_PHASE3_THRESHOLD)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                   help="worker processes for chains (results do not depend on it)")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_fit_args(p):
    p.add_argument("--pool", choices=("all", "low"), default="all")
    p.add_argument("--low-threshold", type=float, default=1.5)
    p.add_argument("--low-reference", type=int, default=None,
                   help="period start used for --pool low (default: latest observed)")
    p.add_argument("--phase3-pool", choices=("same", "all"), default="same",
                   help="countries entering the Phase III hierarchy")
    p.add_argument("--chains", type=int, default=3)
    p.add_argument("--iter", type=int, default=20000)
    p.add_argument("--burnin", type=int, default=10000)
    p.add_argument("--thin", type=int, default=10)


def _add_projection_args(p):
    p.add_argument("--horizon-end-year", type=int, default=2050)
    p.add_argument("--trajectories", type=int, default=2000)
    p.add_argument("--force", action="store_true", help="project even if R-hat checks fail")
    p.add_argument("--rhat-bound", type=float, default=1.1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lowtfr", description="Three-phase Bayesian TFR projection")
    parser.add_argument("--version", action="version", version=f"lowtfr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="estimate Phase II and Phase III hierarchies")
    _add_data_args(p)
    _add_fit_args(p)

    p = sub.add_parser("project", help="simulate trajectories from saved chains")
    _add_data_args(p)
    _add_projection_args(p)
    p.add_argument("--countries", default=None, help="comma-separated ids (default: every fitted country)")

    p = sub.add_parser("validate", help="in-sample fit report and hold-out validation")
    _add_data_args(p)
    _add_fit_args(p)
    _add_projection_args(p)
    p.add_argument("--cutoff", type=int, default=2000,
                   help="estimate on periods ending by this year, score the rest")
    p.add_argument("--window", type=int, nargs=2, default=(1950, 2020), metavar=("START", "END"))
    p.add_argument("--countries", default="PRI",
                   help="comma-separated ids scored in the hold-out report")
    return parser


# --------------------------------------------------------------------------
# helpers

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _input_path(args) -> Path:
    path = Path(args.input) if args.input else Path(fixture_path())
    if not path.is_file():
        raise InputError(f"input file not found: {path}", path=str(path))
    return path


def _load(args):
    path = _input_path(args)
    try:
        store = read_tfr_csv(path, mode=args.mode)
    except DataError as exc:
        raise InputError(f"{path}: {exc}", path=str(path)) from None
    if len(store) == 0:
        raise InputError(f"{path}: no observations", path=str(path))
    return path, store


def _pipeline_config(args) -> PipelineConfig:
    if args.iter <= args.burnin:
        raise InputError("--iter must exceed --burnin")
    if args.chains < 2:
        raise InputError("--chains must be at least 2")
    if args.thin < 1:
        raise InputError("--thin must be at least 1")
    return PipelineConfig(
        pool=args.pool, low_threshold=args.low_threshold, low_reference=args.low_reference,
        phase3_pool=args.phase3_pool, phase3_threshold=args.phase3_threshold,
        iterations=args.iter, burn_in=args.burnin, thin=args.thin, chains=args.chains,
        seed=args.seed, trajectories=getattr(args, "trajectories", 2000),
        rhat_bound=getattr(args, "rhat_bound", 1.1), force=getattr(args, "force", False),
        jobs=max(1, args.jobs),
    )


def _countries(arg, store):
    if not arg:
        return None
    ids = [c.strip() for c in arg.split(",") if c.strip()]
    missing = [c for c in ids if c not in store]
    if missing:
        raise InputError(f"unknown country ids: {', '.join(missing)}")
    return ids


def _rhat_table(*chainsets) -> dict:
    out = {}
    for cs in chainsets:
        for k, v in gelman_rubin(cs, pool_level_names(cs)).items():
            out[f"{cs.kind}.{k}"] = None if not np.isfinite(v) else float(v)
    return out


class Run:
    """Collects manifest fields for one command invocation."""

    def __init__(self, command: str, args, argv):
        self.out = Path(args.out_dir)
        self.started = time.time()
        self.manifest = {
            "command": command,
            "argv": list(argv),
            "version": __version__,
            "seed": args.seed,
            "config": {k: v for k, v in vars(args).items() if k not in ("verbose", "jobs")},
            "inputs": {},
            "outputs": [],
            "status": "running",
        }

    def subdir(self, name) -> Path:
        p = self.out / name
        p.mkdir(parents=True, exist_ok=True)
        return p

    def add_input(self, path):
        self.manifest["inputs"][str(path)] = sha256_file(path)

    def add_output(self, path):
        self.manifest["outputs"].append(str(Path(path).relative_to(self.out)))

    def write_text(self, sub, name, text) -> Path:
        path = self.subdir(sub) / name
        path.write_text(text, encoding="utf-8")
        self.add_output(path)
        return path

    def finish(self, status, error=None):
        self.manifest["status"] = status
        self.manifest["wall_clock_seconds"] = round(time.time() - self.started, 3)
        self.manifest["finished_at"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
        if error is not None:
            self.manifest["error"] = error
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "manifest.json").write_text(
            json.dumps(self.manifest, indent=2, sort_keys=True, default=str), encoding="utf-8")


# --------------------------------------------------------------------------
# commands

def cmd_fit(args, run: Run) -> int:
    path, store = _load(args)
    run.add_input(path)
    cfg = _pipeline_config(args)
    result = fit(store, cfg)
    run.manifest["config"]["pipeline"] = cfg.echo()
    run.manifest["pool"] = {"size": len(result.pool), "ids": sorted(result.pool.ids),
                            "criterion": result.pool.criterion}
    run.manifest["phase3_pool_size"] = len(result.phase3_pool)

    chains_dir = run.subdir("chains")
    extra = {"data_sha256": store.digest(), "input": str(path)}
    for cs in (result.phase2, result.phase3):
        csv_path = write_chainset(cs, chains_dir / cs.kind, extra)
        run.add_output(csv_path)
        run.add_output(csv_path.with_suffix(".json"))

    rhat = _rhat_table(result.phase2, result.phase3)
    bad = {k: v for k, v in rhat.items() if v is not None and v >= cfg.rhat_bound}
    diag = {
        "rhat": rhat,
        "rhat_bound": cfg.rhat_bound,
        "converged": not bad,
        "acceptance_rates": {**result.phase2.acceptance_rates, **result.phase3.acceptance_rates},
    }
    run.write_text("reports", "diagnostics.json", json.dumps(diag, indent=2, sort_keys=True))
    run.manifest["converged"] = not bad
    if bad:
        logger.warning("R-hat at or above %s for %s", cfg.rhat_bound, sorted(bad))
    return EXIT_OK


def _read_chains(run: Run, name):
    base = run.out / "chains" / name
    try:
        cs = read_chainset(base)
    except ChainFileError as exc:
        raise InputError(str(exc), path=str(base.with_suffix(".csv"))) from None
    run.add_input(base.with_suffix(".csv"))
    run.add_input(base.with_suffix(".json"))
    return cs


def cmd_project(args, run: Run) -> int:
    path, store = _load(args)
    run.add_input(path)
    phase2 = _read_chains(run, "phase2")
    phase3 = _read_chains(run, "phase3")
    if phase2.meta.get("mode", args.mode) != args.mode:
        raise InputError(f"chains were fitted in {phase2.meta.get('mode')} mode, not {args.mode}")
    countries = _countries(args.countries, store) or [c for c in phase2.countries if c in store]
    segments = {c: classify_phases(store[c], args.phase3_threshold) for c in countries}
    step = store[countries[0]].step
    last = max(int(store[c].years[-1]) for c in countries)
    horizon = horizon_to(last, step, args.horizon_end_year)
    if horizon < 1:
        raise InputError(f"--horizon-end-year {args.horizon_end_year} leaves no period to project")
    fans = {}
    for cid in countries:
        h = horizon_to(int(store[cid].years[-1]), step, args.horizon_end_year)
        fans.update(project(store, segments, phase2, phase3, h, n_trajectories=args.trajectories,
                            seed=args.seed, countries=[cid], rhat_bound=args.rhat_bound,
                            force=args.force, threshold=args.phase3_threshold))
    long_rows = ["country_id,period_start,level,tfr"]
    for cid, res in fans.items():
        run.write_text("projections", f"{cid}.csv", fan_csv(res))
        for i, level in enumerate(res.levels):
            for j, y in enumerate(res.years):
                long_rows.append(f"{cid},{int(y)},{level},{res.fan[i, j]:.6f}")
    run.write_text("projections", "fans_long.csv", "\n".join(long_rows) + "\n")
    run.manifest["countries"] = countries
    run.manifest["rhat"] = _rhat_table(phase2, phase3)
    return EXIT_OK


def cmd_validate(args, run: Run) -> int:
    path, store = _load(args)
    run.add_input(path)
    cfg = _pipeline_config(args)
    countries = _countries(args.countries, store)
    result = fit(store, cfg)
    report = fit_diagnostics(store, result.phase2, tuple(args.window), seed=args.seed)
    names = {cid: store[cid].country_name for cid in store.ids}
    run.write_text("reports", "fit_report.json", report.to_json())
    run.write_text("reports", "fit_report.txt", report.to_text(names=names))

    # the hold-out run keeps the pool chosen on the full data
    holdout = cross_validate(store, args.cutoff, replace(cfg, pool=result.pool), countries)
    run.write_text("reports", "holdout_report.json", holdout.to_json())
    run.write_text("reports", "holdout_report.txt", holdout.to_text())
    run.manifest["pool"] = {"size": len(result.pool), "ids": sorted(result.pool.ids)}
    run.manifest["summary"] = {
        "total_coverage": report.total_coverage,
        "total_rmse": report.total_rmse,
        "total_mae": report.total_mae,
        "holdout_coverage": holdout.coverage,
    }
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "project": cmd_project, "validate": cmd_validate}


def _classify(exc) -> tuple[int, dict]:
    err = {"type": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, InputError):
        if exc.path:
            err["path"] = exc.path
        return EXIT_INPUT, err
    if isinstance(exc, (DataError, FileNotFoundError)):
        if getattr(exc, "filename", None):
            err["path"] = str(exc.filename)
        return EXIT_INPUT, err
    if isinstance(exc, ValidationError):
        return EXIT_INPUT, err
    if isinstance(exc, ConvergenceError):
        err["hint"] = "rerun with more iterations or pass --force"
        return EXIT_COMPUTE, err
    if isinstance(exc, (McmcError, ProjectionError, ArithmeticError, ValueError)):
        return EXIT_COMPUTE, err
    return EXIT_COMPUTE, err


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    run = Run(args.command, args, argv)
    try:
        status = COMMANDS[args.command](args, run)
    except Exception as exc:  # every failure ends up in the manifest and as JSON on stderr
        status, err = _classify(exc)
        logger.debug("command failed", exc_info=True)
        try:
            run.finish("failed", err)
        except OSError:
            pass
        print(json.dumps({"error": err, "exit_status": status}), file=sys.stderr)
        return status
    run.finish("ok")
    return status


if __name__ == "__main__":
    sys.exit(main())
