"""Command-line front end.

Usage::

    distleak <subcommand> [--config FILE] [--seed N] [--out DIR] [--threads N] [--trials N]

Subcommands: expA, expA-earlystop, expB, expC, membership, theory,
subsampling, game. Each writes a CSV and a ``manifest.txt`` into ``--out``.

Exit status: 0 on success, 1 when a theory check fails, 2 on a configuration
error.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import os
import platform
import sys

from . import __version__, experiments as E, parallel
from .config import load_config
from .errors import DistleakError, InvalidParameterError
from .numerics import SeededRng

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2

SUBCOMMANDS = ("expA", "expA-earlystop", "expB", "expC", "membership", "theory", "subsampling", "game")

_EXPERIMENT_OF = {
    "expA": (E.EXPA_EPS, "eps"),
    "expA-earlystop": (E.EXPA_MSE, "target_mse"),
    "expB": (E.EXPB_MSE, "target_mse"),
    "expC": (E.EXPC_SIZE, "sizes"),
    "membership": (E.MEMBERSHIP, "variants"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="distleak", description="Distribution inference experiments.")
    sub = parser.add_subparsers(dest="command", metavar="subcommand")
    sub.required = True
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=f"run {name}")
        p.add_argument("--config", help="sectioned key = value configuration file")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", default="results", help="output directory (created if missing)")
        p.add_argument("--threads", type=int, default=1, help="worker processes; 0 = all cores")
        p.add_argument("--trials", type=int, help="trial count override")
    return parser


def _experiment_config(command: str, values: dict) -> E.ExperimentConfig:
    name, sweep_key = _EXPERIMENT_OF[command]
    kwargs = dict(values)
    if sweep_key in kwargs:
        kwargs["sweep_values"] = kwargs.pop(sweep_key)
    return E.ExperimentConfig(name, **kwargs)


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _run_experiment(command, values, out):
    result = E.run_experiment(_experiment_config(command, values))
    path = os.path.join(out, f"{command}.csv")
    E.write_results(result.rows, path)
    return EXIT_OK, [path]


def _run_theory(values, out):
    from . import theory as T

    seed = values.pop("seed", 0)
    c = values.pop("c", 2.0)
    p0 = values.pop("p0", 0.8)
    p1 = values.pop("p1", 0.2)
    subsample_n = values.pop("subsample_n", 100_000)
    _check_probability(p0, "p0")
    _check_probability(p1, "p1")
    if not c > 0:
        raise InvalidParameterError(f"c must be positive, got {c}")
    config = T.TheoryConfig(**values)
    if config.trials < 100:
        raise InvalidParameterError(f"trials must be at least 100, got {config.trials}")
    reports = T.run_theory_checks(SeededRng(seed), config, c, p0, p1, subsample_n)
    return _emit_checks(reports, os.path.join(out, "theory.csv"))


def _run_subsampling(values, out):
    from . import theory as T

    seed, p0, p1, n = values.get("seed", 0), values.get("p0", 0.8), values.get("p1", 0.2), values.get("n", 100_000)
    _check_probability(p0, "p0")
    _check_probability(p1, "p1")
    if n < 1:
        raise InvalidParameterError(f"n must be positive, got {n}")
    rng = SeededRng(seed)
    reports = [T.subsampling_gap(p0, p1, n=n, rng=rng.spawn("check", 5)).to_check(),
               T.subsampling_gap(p0, p1, t_is_feature=True, n=n, rng=rng.spawn("check", 6)).to_check()]
    return _emit_checks(reports, os.path.join(out, "subsampling.csv"))


def _check_probability(p, name):
    if not 0.0 <= p <= 1.0:
        raise InvalidParameterError(f"{name} must lie in [0, 1], got {p}")


def _emit_checks(reports, path):
    from .theory import THEORY_CSV_COLUMNS

    _write_rows(path, THEORY_CSV_COLUMNS, [[r.row()[k] for k in THEORY_CSV_COLUMNS] for r in reports])
    for r in reports:
        print(f"{r.check}: {'pass' if r.passed else 'FAIL'} (estimate {r.estimate:.6g}, target {r.target:.6g})")
    status = EXIT_OK if all(r.passed for r in reports) else EXIT_CHECK_FAILED
    return status, [path]


def _run_game(values, out):
    config = E.GameConfig(**values)
    trials, adv = E.run_game(config)
    trials_path = os.path.join(out, "game_trials.csv")
    _write_rows(trials_path, E.GAME_COLUMNS,
                [[t.ordinal, repr(t.true_r), repr(t.guess_r), repr(t.distance)] for t in trials])
    summary = os.path.join(out, "game.csv")
    base = ["game", config.family, "eps", repr(float(config.eps)), config.mode, config.task]
    rows = [E.ResultRow(*base, "d0", adv.d_zero, 0.0, adv.trial_count),
            E.ResultRow(*base, "mean_distance", adv.mean_distance, adv.ci95_halfwidth, adv.trial_count),
            E.ResultRow(*base, "advantage", adv.advantage, adv.ci95_halfwidth, adv.trial_count)]
    E.write_results(rows, summary)
    print(f"advantage {adv.advantage:.4f} +/- {adv.ci95_halfwidth:.4f} over {adv.trial_count} trials")
    return EXIT_OK, [summary, trials_path]


def _versions() -> dict:
    import numpy
    import scipy
    import sklearn

    return {"distleak": __version__, "numpy": numpy.__version__, "scipy": scipy.__version__,
            "scikit-learn": sklearn.__version__, "python": platform.python_version()}


def write_manifest(path, argv, loaded, seed, threads, started, finished, outputs, status) -> None:
    lines = [
        f"command = {' '.join(argv)}",
        f"subcommand = {loaded.section}",
        f"config = {loaded.source or 'none'}",
        f"config_digest = sha256:{loaded.digest}",
        f"master_seed = {seed}",
        f"threads = {threads}",
    ]
    lines += [f"version.{k} = {v}" for k, v in _versions().items()]
    lines += [
        f"start = {started}",
        f"end = {finished}",
        f"outputs = {','.join(os.path.basename(p) for p in outputs)}",
        f"exit_status = {status}",
    ]
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    command = args.command
    try:
        loaded = load_config(args.config, command)
        values = dict(loaded.values)
        if args.seed is not None:
            values["seed"] = args.seed
        if args.trials is not None:
            values["trials"] = args.trials
        if args.threads < 0:
            raise InvalidParameterError(f"threads must be >= 0, got {args.threads}")
        threads = parallel.set_workers(args.threads)
        os.makedirs(args.out, exist_ok=True)
        seed = values.get("seed", 0)
        started = _now()
        if command in _EXPERIMENT_OF:
            status, outputs = _run_experiment(command, values, args.out)
        elif command == "theory":
            status, outputs = _run_theory(dict(values), args.out)
        elif command == "subsampling":
            status, outputs = _run_subsampling(values, args.out)
        else:
            status, outputs = _run_game(values, args.out)
    except DistleakError as exc:
        print(f"distleak {command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    finally:
        parallel.set_workers(1)
    manifest = os.path.join(args.out, "manifest.txt")
    write_manifest(manifest, ["distleak"] + argv, loaded, seed, threads, started, _now(),
                   outputs, status)
    for path in outputs:
        print(f"wrote {path}")
    return status


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
