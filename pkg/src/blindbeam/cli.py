"""Command-line front end.

    blindbeam run --preset los-default --seed 7 --out results/
    blindbeam detect --preset nlos --T 8192 --tau 3

Exit codes: 0 success, 1 runtime failure, 2 bad input. Results go to stdout
as one JSON object per line.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .bench import (Scenario, ScenarioError, build_trial, dbm_to_watts, scaling_slopes, timed_run,
                    trial_stream, write_outputs)
from .measurement import MeasurementSession, collect_random_samples, conditional_means
from .solvers import detect_los

logger = logging.getLogger(__name__)

EXIT_RUNTIME = 1
EXIT_USAGE = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ScenarioError(message)


def _common(p):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--scenario", help="YAML scenario file")
    src.add_argument("--preset", help="built-in scenario name")
    p.add_argument("--seed", type=int, help="master seed (overrides the scenario)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a scenario key; repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="blindbeam", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run a scenario and write results.csv + manifest.json")
    _common(run)
    run.add_argument("--out", default="results", help="output directory")
    run.add_argument("--algorithms", help="comma-separated algorithm list")
    run.add_argument("--threads", type=int, help="worker threads (default: $BLINDBEAM_THREADS)")

    det = sub.add_parser("detect", help="classify the direct path as LoS or NLoS")
    _common(det)
    det.add_argument("--T", type=int, default=8192, help="number of random probes")
    det.add_argument("--tau", type=float, default=3.0, help="decision threshold")
    det.add_argument("--trial", type=int, default=0, help="which trial's channel to probe")
    return parser


def load_scenario(args) -> Scenario:
    if args.scenario:
        sc = Scenario.load(args.scenario)
    else:
        sc = Scenario.preset(args.preset or "los-default")
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"master_seed={args.seed}")
    if getattr(args, "algorithms", None):
        overrides.append("algorithms=[" + args.algorithms + "]")
    return sc.with_overrides(overrides)


def cmd_run(args) -> int:
    sc = load_scenario(args)
    rows, elapsed = timed_run(sc, args.threads)
    write_outputs(sc, rows, args.out, elapsed, args.threads)
    for r in rows:
        print(json.dumps(r, allow_nan=True))
    if sc.sweep_axis == "N":
        slopes = scaling_slopes(rows)
        if slopes:
            print(json.dumps({"scaling_slopes": slopes}))
    return 0


def cmd_detect(args) -> int:
    sc = load_scenario(args)
    if sc.users != 1:
        raise ScenarioError("detection runs on single-user scenarios")
    if args.T < 64 * sc.K:
        raise ScenarioError(f"--T must be at least {64 * sc.K} for K = {sc.K}")
    env = build_trial(sc, args.trial)
    session = MeasurementSession(env.users, sc.K, float(dbm_to_watts(sc.P_dBm)),
                                 float(dbm_to_watts(sc.noise_dBm)), mode=sc.mode, pilot=sc.pilot,
                                 interference_power=env.interference,
                                 rng=trial_stream(sc.master_seed, args.trial, 100),
                                 static_channels=env.realizations)
    table = conditional_means(collect_random_samples(session, args.T))
    verdict = detect_los(table, args.tau)
    print(json.dumps({"scenario": sc.name, "status": verdict.status,
                      "statistic": verdict.statistic, "T": args.T, "tau": args.tau}))
    return 0


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ScenarioError as exc:
        print(f"blindbeam: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = cmd_run if args.command == "run" else cmd_detect
    try:
        return handler(args)
    except ScenarioError as exc:
        print(f"blindbeam: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - report, never traceback, at the CLI boundary
        logger.debug("run failed", exc_info=True)
        print(f"blindbeam: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
