"""Umbrella command line: ``idleclimb master|worker|sim ...``."""

from __future__ import annotations

import sys
from typing import Sequence

from . import master, simharness, worker

_GROUPS = {
    "master": master.main,
    "worker": worker.main,
    "sim": simharness.main,
}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ("-h", "--help"):
        print("usage: idleclimb {master|worker|sim} ...")
        print("  master  prepare, start, stop, inspect and report on a job directory")
        print("  worker  run the idle-time daemon or probe scheduling decisions")
        print("  sim     deterministic fleet simulation and efficiency sweeps")
        return 0 if argv else 2
    group = argv[0]
    if group not in _GROUPS:
        print(f"unknown command group {group!r}; expected master, worker or sim",
              file=sys.stderr)
        return 2
    return _GROUPS[group](argv[1:])


if __name__ == "__main__":
    sys.exit(main())
