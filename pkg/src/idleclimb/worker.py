"""Portable idle-time worker daemon.

Emulates the scheduling contract of a desktop task scheduler: wake every
``poll_interval`` seconds, start the optimization loop only when the machine
has been user-idle past a threshold and the current time falls inside the
configured daily window, never run two instances at once, and cancel the
loop as soon as the user comes back.  Cancellation is cooperative: the loop
checks between protocol steps and at evaluation checkpoints, and the file
protocol tolerates genuinely hard kills anyway.
"""

from __future__ import annotations

import argparse
import bisect
import logging
import random
import subprocess
import sys
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Protocol, Sequence

from .clock import Clock, SECONDS_PER_DAY, WallClock
from .coordination import CoordinationError, JobDirectory, read_manifest, signal_exists
from .objective import Objective, from_manifest as objective_from_manifest
from .optimizer import LoopReport, OptimizerMode, StopCondition, work_loop

log = logging.getLogger(__name__)


class SkipReason(Enum):
    OUTSIDE_WINDOW = "outside_window"
    NOT_IDLE = "not_idle"
    ALREADY_RUNNING = "already_running"
    NO_SIGNAL = "no_signal"
    SHARE_ERROR = "share_error"


@dataclass(frozen=True)
class TickDecision:
    start: bool
    job: JobDirectory | None = None
    reason: SkipReason | None = None


class IdleProbe(Protocol):
    def idle_duration(self, now: float) -> float:
        """Seconds since the last user activity, as of ``now``."""
        ...


@dataclass(frozen=True)
class TraceProbe:
    """Scripted activity trace for tests and simulation.

    The machine counts as idle from ``idle_since`` onward, interrupted by
    each timestamp in ``activity_times`` (sorted, non-decreasing).
    """

    activity_times: tuple[float, ...] = ()
    idle_since: float = 0.0

    def __post_init__(self):
        if any(b < a for a, b in zip(self.activity_times, self.activity_times[1:])):
            raise ValueError("activity timestamps must be non-decreasing")

    def idle_duration(self, now: float) -> float:
        i = bisect.bisect_right(self.activity_times, now)
        last = self.activity_times[i - 1] if i > 0 else self.idle_since
        return max(0.0, now - last)


class SystemIdleProbe:
    """Best-effort real idle time.  Uses xprintidle when present; otherwise
    reports time since this probe was created, which effectively treats the
    machine as always idle.  Correctness-critical paths never rely on this;
    tests and the simulator use scripted traces."""

    def __init__(self):
        self._origin = time.time()
        self._warned = False

    def idle_duration(self, now: float) -> float:
        try:
            out = subprocess.run(
                ["xprintidle"], capture_output=True, text=True, timeout=2.0
            )
            if out.returncode == 0:
                return float(out.stdout.strip()) / 1000.0
        except (OSError, ValueError, subprocess.TimeoutExpired):
            pass
        if not self._warned:
            log.warning("no system idle source available; assuming idle since startup")
            self._warned = True
        return now - self._origin


@dataclass(frozen=True)
class WorkerConfig:
    jobs: tuple  # JobDirectory handles or directory paths, in scan order
    worker_id: str
    mode: OptimizerMode = OptimizerMode.REPLACE_IF_BETTER
    poll_interval: float = 600.0
    idle_threshold: float = 3600.0
    retry_window: float = 300.0  # recorded for fidelity; the poll cycle makes it moot
    daily_start: float = 43200.0  # seconds after midnight (12:00)
    daily_duration: float = 85800.0  # 23 h 50 min
    probe_granule: float = 1.0

    def __post_init__(self):
        if self.poll_interval <= 0:
            raise ValueError("poll_interval must be positive")
        if self.idle_threshold < 0:
            raise ValueError("idle_threshold must be non-negative")
        if not 0 < self.daily_duration <= SECONDS_PER_DAY:
            raise ValueError("daily_duration must be in (0, 86400]")
        if not self.jobs:
            raise ValueError("at least one job directory is required")


def in_daily_window(config: WorkerConfig, time_of_day: float) -> bool:
    start = config.daily_start
    end = start + config.daily_duration
    if end <= SECONDS_PER_DAY:
        return start <= time_of_day < end
    return time_of_day >= start or time_of_day < end - SECONDS_PER_DAY


class InstanceGuard:
    """In-process single-instance bookkeeping, per (worker, job)."""

    def __init__(self):
        self._running: set[tuple[str, str]] = set()
        self._mutex = threading.Lock()

    def acquire(self, worker_id: str, job_id: str) -> bool:
        with self._mutex:
            key = (worker_id, job_id)
            if key in self._running:
                return False
            self._running.add(key)
            return True

    def release(self, worker_id: str, job_id: str) -> None:
        with self._mutex:
            self._running.discard((worker_id, job_id))

    def any_running(self, worker_id: str) -> bool:
        with self._mutex:
            return any(w == worker_id for w, _ in self._running)


def scheduler_tick(
    config: WorkerConfig,
    probe: IdleProbe,
    now: float,
    *,
    running: bool = False,
    time_of_day: float | None = None,
    clock: Clock | None = None,
) -> TickDecision:
    """One scheduling decision.

    Starts the first job in scan order whose signal is present, provided the
    time is inside the daily window, the machine has been idle long enough,
    and no instance is already running.  Share errors are a Skip, not a
    failure, mirroring a launcher script that silently exits when the
    network share is gone.
    """
    tod = time_of_day if time_of_day is not None else now % SECONDS_PER_DAY
    if not in_daily_window(config, tod):
        return TickDecision(False, reason=SkipReason.OUTSIDE_WINDOW)
    if probe.idle_duration(now) < config.idle_threshold:
        return TickDecision(False, reason=SkipReason.NOT_IDLE)
    if running:
        return TickDecision(False, reason=SkipReason.ALREADY_RUNNING)
    any_error = False
    for entry in config.jobs:
        try:
            job = entry if isinstance(entry, JobDirectory) else JobDirectory.open(entry, clock)
            if signal_exists(job):
                return TickDecision(True, job=job)
        except CoordinationError:
            any_error = True
    return TickDecision(
        False, reason=SkipReason.SHARE_ERROR if any_error else SkipReason.NO_SIGNAL
    )


@dataclass
class DaemonReport:
    ticks: int = 0
    starts: int = 0
    kills: int = 0
    completed_loops: int = 0
    decisions: list[tuple[float, TickDecision]] = field(default_factory=list)
    loop_reports: list[LoopReport] = field(default_factory=list)


def run_daemon(
    config: WorkerConfig,
    probe: IdleProbe,
    clock: Clock,
    cancel: Callable[[], bool],
    *,
    objective_for: Callable[[JobDirectory], Objective] | None = None,
    stop_for: Callable[[JobDirectory], StopCondition] | None = None,
    guard: InstanceGuard | None = None,
    rng: random.Random | None = None,
    observer=None,
) -> DaemonReport:
    """Tick until cancelled, launching the work loop on Start decisions and
    cancelling it the moment the activity probe reports the user is back.

    The objective and stop condition default to whatever the job manifest
    describes; tests may inject both.
    """
    objective_for = objective_for or (lambda job: objective_from_manifest(read_manifest(job)))
    stop_for = stop_for or (lambda job: StopCondition.from_manifest(read_manifest(job)))
    guard = guard or InstanceGuard()
    rng = rng or random.Random()
    report = DaemonReport()
    next_tick = clock.now()

    while not cancel():
        now = clock.now()
        if now < next_tick:
            clock.sleep(next_tick - now)
            continue
        decision = scheduler_tick(
            config,
            probe,
            now,
            running=guard.any_running(config.worker_id),
            time_of_day=clock.time_of_day(now),
            clock=clock,
        )
        report.ticks += 1
        report.decisions.append((now, decision))
        if decision.start:
            assert decision.job is not None
            _run_one_loop(config, probe, clock, cancel, decision.job, report,
                          objective_for, stop_for, guard, rng, observer)
        next_tick += config.poll_interval
        while next_tick <= clock.now():
            next_tick += config.poll_interval
    return report


def _run_one_loop(config, probe, clock, cancel, job, report,
                  objective_for, stop_for, guard, rng, observer) -> None:
    if not guard.acquire(config.worker_id, job.job_id):
        return
    report.starts += 1
    loop_start = clock.now()
    killed = False

    def loop_cancel() -> bool:
        nonlocal killed
        if cancel():
            return True
        now = clock.now()
        if probe.idle_duration(now) < (now - loop_start) - 1e-9:
            killed = True
            return True
        return killed

    try:
        loop_report = work_loop(
            job,
            config.worker_id,
            objective_for(job),
            config.mode,
            stop_for(job),
            loop_cancel,
            rng=rng,
            observer=observer,
        )
    except CoordinationError as exc:
        log.warning("%s: loop on %s failed: %s", config.worker_id, job.path, exc)
        return
    finally:
        guard.release(config.worker_id, job.job_id)
    report.loop_reports.append(loop_report)
    if loop_report.exit_reason == "cancelled" and killed:
        report.kills += 1
        log.info("%s: killed by user activity on %s", config.worker_id, job.path)
    else:
        report.completed_loops += 1


# ---------------------------------------------------------------------------
# Configuration file and command line


def parse_time_of_day(text: str) -> float:
    text = text.strip()
    if ":" in text:
        hours, minutes = text.split(":", 1)
        return int(hours) * 3600.0 + int(minutes) * 60.0
    return float(text)


def parse_worker_config(text: str) -> WorkerConfig:
    """Parse the key=value daemon configuration (repeated job= lines)."""
    values: dict[str, str] = {}
    jobs: list[str] = []
    for i, line in enumerate(text.splitlines()):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {i + 1}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if key == "job":
            jobs.append(value)
        else:
            values[key] = value
    import os

    worker_id = values.get("worker_id") or f"{os.uname().nodename}:{os.getpid()}"
    return WorkerConfig(
        jobs=tuple(jobs),
        worker_id=worker_id,
        mode=OptimizerMode.parse(values.get("mode", "replace_if_better")),
        poll_interval=float(values.get("poll_interval", 600)),
        idle_threshold=float(values.get("idle_threshold", 3600)),
        retry_window=float(values.get("retry_window", 300)),
        daily_start=parse_time_of_day(values.get("daily_start", "12:00")),
        daily_duration=float(values.get("daily_duration", 85800)),
    )


def _load_config(path: str) -> WorkerConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_worker_config(fh.read())


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="idleclimb worker", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the daemon until interrupted")
    p_run.add_argument("--config", required=True)

    sub.add_parser("probe", help="print the current idle-time estimate")

    p_tick = sub.add_parser("tick", help="print a single dry-run scheduling decision")
    p_tick.add_argument("--config", required=True)
    p_tick.add_argument("--now", type=float, required=True)
    p_tick.add_argument("--idle", type=float, default=None,
                        help="scripted idle seconds (defaults to the system probe)")

    args = parser.parse_args(argv)

    if args.command == "probe":
        probe = SystemIdleProbe()
        print(f"idle={probe.idle_duration(time.time()):.1f}")
        return 0

    try:
        config = _load_config(args.config)
    except (OSError, ValueError) as exc:
        print(f"error=config {exc}", file=sys.stderr)
        return 2

    if args.command == "tick":
        if args.idle is not None:
            probe: IdleProbe = TraceProbe(idle_since=args.now - args.idle)
        else:
            probe = SystemIdleProbe()
        decision = scheduler_tick(config, probe, args.now)
        if decision.start:
            print(f"decision=start job={decision.job.path}")
        else:
            print(f"decision=skip reason={decision.reason.value}")
        return 0

    # run
    stop_event = threading.Event()
    clock = WallClock(stop_event)
    import signal as _signal

    def _on_signal(signum, frame):
        del signum, frame
        stop_event.set()

    _signal.signal(_signal.SIGINT, _on_signal)
    _signal.signal(_signal.SIGTERM, _on_signal)
    report = run_daemon(config, SystemIdleProbe(), clock, stop_event.is_set)
    print(
        f"ticks={report.ticks} starts={report.starts} kills={report.kills} "
        f"completed_loops={report.completed_loops}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
