"""Operator commands for preparing and controlling a job directory.

The coordinator role is deliberately thin: every command is a short-lived
process whose state lives entirely in the job directory, so the same machine
can coordinate one job and contribute idle cycles to another.

Commands print line-oriented ``key=value`` output.  Exit codes: 0 success,
2 invalid parameters, 3 wrong job state (not initialized, already
initialized, or still running), 4 I/O failure.
"""

from __future__ import annotations

import argparse
import os
import random
import sys
from typing import Sequence

from . import coordination as coord
from . import objective as objmod
from . import optimizer

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_STATE = 3
EXIT_IO = 4


def _print(key: str, value) -> None:
    print(f"{key}={value}")


def _open(path: str) -> coord.JobDirectory:
    return coord.JobDirectory.open(path)


def cmd_init(args) -> int:
    if args.levels < 2:
        print("error=levels must be at least 2", file=sys.stderr)
        return EXIT_USAGE
    if not 0 <= args.target_order < args.n:
        print("error=target order must lie in [0, n)", file=sys.stderr)
        return EXIT_USAGE
    objective = objmod.PhaseMaskObjective(
        length=args.n, level_count=args.levels, target_order=args.target_order
    )
    stop = optimizer.StopCondition(
        max_total_evaluations=args.stop_max_evals,
        target_performance=args.stop_target,
        stagnation_proposals=args.stop_stagnation,
    )
    job_id = args.job_id or os.path.basename(os.path.abspath(args.dir))
    job = coord.JobDirectory.create(args.dir, job_id)
    manifest = {
        "objective": "phase_mask",
        "n": str(args.n),
        "levels": str(args.levels),
        "target_order": str(args.target_order),
    }
    manifest.update(stop.manifest_params())
    coord.write_manifest(job, manifest)

    if args.init_config == "zero":
        config = (0,) * args.n
    else:
        rng = random.Random(args.seed)
        config = tuple(rng.randrange(args.levels) for _ in range(args.n))
    try:
        state = optimizer.initialize(job, config, objective, force=args.force)
    except coord.AlreadyInitializedError:
        print("error=already initialized (use --force to overwrite)", file=sys.stderr)
        return EXIT_STATE
    except coord.ShareUnreachableError as exc:
        print(f"error={exc}", file=sys.stderr)
        return EXIT_IO
    _print("job_id", job.job_id)
    _print("version", state.version)
    _print("performance", f"{state.performance:.17g}")
    _print("config", " ".join(str(v) for v in state.config))
    return EXIT_OK


def cmd_start(args) -> int:
    try:
        job = _open(args.dir)
        coord.read_best(job)  # refuse to wave workers at an uninitialized job
    except coord.NotInitializedError:
        print("error=not initialized (run init first)", file=sys.stderr)
        return EXIT_STATE
    except coord.CoordinationError as exc:
        print(f"error={exc}", file=sys.stderr)
        return EXIT_IO
    try:
        coord.signal_set(job)
    except coord.CoordinationError as exc:
        print(f"error={exc}", file=sys.stderr)
        return EXIT_IO
    _print("signal", "set")
    return EXIT_OK


def cmd_stop(args) -> int:
    try:
        job = _open(args.dir)
        coord.signal_clear(job)
    except coord.CoordinationError as exc:
        print(f"error={exc}", file=sys.stderr)
        return EXIT_IO
    _print("signal", "cleared")
    return EXIT_OK


def cmd_status(args) -> int:
    try:
        job = _open(args.dir)
    except coord.CoordinationError as exc:
        print(f"error={exc}", file=sys.stderr)
        return EXIT_IO
    try:
        present = coord.signal_exists(job)
    except coord.CoordinationError as exc:
        print(f"error={exc}", file=sys.stderr)
        return EXIT_IO
    try:
        state = coord.read_best(job)
    except coord.NotInitializedError:
        print("error=not initialized", file=sys.stderr)
        return EXIT_STATE
    _print("job_id", job.job_id)
    _print("signal", "present" if present else "absent")
    _print("version", state.version)
    _print("performance", f"{state.performance:.17g}")
    _print("estimated", int(state.estimated))
    _print("updated_by", state.updated_by)
    _print("updated_at", f"{state.updated_at:.6f}")
    _print("commits", coord.read_commit_count(job))
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        job = _open(args.dir)
        if coord.signal_exists(job):
            print("error=job still running (stop it before reporting)", file=sys.stderr)
            return EXIT_STATE
        manifest = coord.read_manifest(job)
        objective = objmod.from_manifest(manifest)
        audit = optimizer.audit_estimate(job, objective)
    except coord.NotInitializedError:
        print("error=not initialized", file=sys.stderr)
        return EXIT_STATE
    except coord.CoordinationError as exc:
        print(f"error={exc}", file=sys.stderr)
        return EXIT_IO
    state = audit.recorded
    _print("job_id", job.job_id)
    _print("version", state.version)
    _print("config", " ".join(str(v) for v in state.config))
    _print("recorded_performance", f"{state.performance:.17g}")
    _print("exact_performance", f"{audit.exact_performance:.17g}")
    _print("estimated", int(state.estimated))
    _print("estimate_drift", f"{audit.drift:.17g}")
    tallies = coord.read_fleet_tally(job)
    _print("commits", coord.read_commit_count(job))
    _print("evaluations", sum(t.evaluations for t in tallies.values()))
    _print("rejected_not_better", sum(t.rejects_not_better for t in tallies.values()))
    _print("rejected_conflict", sum(t.rejects_conflict for t in tallies.values()))
    _print("rejected_stale", sum(t.rejects_stale for t in tallies.values()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="idleclimb master", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_init = sub.add_parser("init", help="write the manifest and version-0 record")
    p_init.add_argument("dir")
    p_init.add_argument("--n", type=int, default=8, help="mask length")
    p_init.add_argument("--levels", type=int, default=2, help="number of phase levels")
    p_init.add_argument("--target-order", type=int, default=1, dest="target_order")
    p_init.add_argument("--init-config", choices=["zero", "random"], default="zero",
                        dest="init_config")
    p_init.add_argument("--seed", type=int, default=0)
    p_init.add_argument("--stop-max-evals", type=int, default=None, dest="stop_max_evals")
    p_init.add_argument("--stop-target", type=float, default=None, dest="stop_target")
    p_init.add_argument("--stop-stagnation", type=int, default=None, dest="stop_stagnation")
    p_init.add_argument("--job-id", default=None, dest="job_id")
    p_init.add_argument("--force", action="store_true")
    p_init.set_defaults(func=cmd_init)

    for name, func in (("start", cmd_start), ("stop", cmd_stop),
                       ("status", cmd_status), ("report", cmd_report)):
        p = sub.add_parser(name)
        p.add_argument("dir")
        p.set_defaults(func=func)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
