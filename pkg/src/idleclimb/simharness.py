"""Deterministic fleet simulator over a virtual clock.

The simulator runs each logical worker's *real* work loop (the same
optimizer and coordination code used against a real shared directory)
against an in-memory job directory.  Virtual time advances only at explicit
cost points: every primitive directory operation takes ``t_io`` seconds and
an evaluation takes ``t_eval * cost_hint / speed_factor`` seconds, consumed
in checkpoint-sized slices so mid-evaluation aborts land where they would in
real life.

Concurrency is event interleaving only.  Every worker runs on its own
thread, but exactly one thread is ever runnable: a thread that needs virtual
time to pass parks itself in the event queue and hands the baton to whoever
is due next.  Ties in event time break by (time, worker id, event kind), so
a run is a pure function of (fleet, job setup, sim config, seed) and reports
compare bit-for-bit across runs and across directory backends.

Speedup accounting: ``speedup`` is the virtual time the fastest fleet member
would need to perform the run's completed evaluations back to back, divided
by the fleet's makespan.  Coordination costs, lock waits, scheduling gaps
and aborted work all shrink it, and ``efficiency = speedup / ideal_speedup``
is provably at most 1: completed evaluation work cannot exceed the fleet's
combined evaluation rate times the makespan.
"""

from __future__ import annotations

import heapq
import math
import random
import sys
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .clock import SECONDS_PER_DAY
from .coordination import (
    Backend,
    JobDirectory,
    MemBackend,
    SIGNAL_FILE,
    read_best,
    signal_clear,
    signal_set,
)
from .objective import Config, EvaluationAborted, Objective, PhaseMaskObjective
from .optimizer import (
    Outcome,
    OptimizerMode,
    ProposalRecord,
    StopCondition,
    initialize,
    work_loop,
)

EFFICIENCY_TOLERANCE = 1e-9

_KIND_RANK = {"io": 0, "eval": 1, "sleep": 2, "spawn": 3}


class SimHorizon(Exception):
    """Raised inside a simulated worker when the horizon cuts the run off."""


class _Task:
    __slots__ = ("name", "thread", "baton", "done", "error")

    def __init__(self, name: str):
        self.name = name
        self.thread: threading.Thread | None = None
        self.baton = threading.Lock()
        self.done = False
        self.error: BaseException | None = None


class VirtualKernel:
    """Sequential-thread discrete-event scheduler.

    Tasks call :meth:`advance` to consume virtual time; the kernel resumes
    whichever parked task owns the earliest event.  Exactly one thread runs
    at any instant, handing control over through per-task baton locks, which
    is what makes runs deterministic.
    """

    def __init__(self, horizon: float = math.inf):
        self.now = 0.0
        self.horizon = horizon
        self._heap: list[tuple[float, str, int, int]] = []
        self._seq = 0
        self._tasks: dict[str, _Task] = {}
        self._main_baton = threading.Lock()
        self._main_baton.acquire()
        self._stopping = False

    def spawn(self, name: str, fn: Callable[[], None]) -> None:
        if name in self._tasks:
            raise ValueError(f"duplicate task name {name!r}")
        task = _Task(name)
        task.baton.acquire()  # the task starts parked
        self._tasks[name] = task

        def body():
            task.baton.acquire()
            try:
                if not self._stopping:
                    fn()
            except SimHorizon:
                pass
            except BaseException as exc:  # surfaced after the event loop stops
                task.error = exc
            finally:
                task.done = True
                self._main_baton.release()

        task.thread = threading.Thread(target=body, name=f"sim-{name}", daemon=True)
        task.thread.start()
        self._push(self.now, name, "spawn")

    def _push(self, at: float, name: str, kind: str) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (at, name, _KIND_RANK.get(kind, 9), self._seq))

    def advance(self, name: str, duration: float, kind: str) -> None:
        """Consume virtual time on behalf of task ``name``."""
        at = self.now + (duration if duration > 0.0 else 0.0)
        if self._stopping:
            raise SimHorizon
        # Fast path: if no other event precedes ours, just move the clock.
        if at <= self.horizon:
            if not self._heap:
                self.now = at
                return
            head = self._heap[0]
            if at < head[0] or (
                at == head[0] and (name, _KIND_RANK.get(kind, 9)) < (head[1], head[2])
            ):
                self.now = at
                return
        task = self._tasks[name]
        self._push(at, name, kind)
        self._main_baton.release()
        task.baton.acquire()
        if self._stopping:
            raise SimHorizon

    def run(self) -> None:
        """Drive events until all tasks finish or the horizon passes."""
        try:
            while self._heap:
                at, name, _rank, _seq = heapq.heappop(self._heap)
                task = self._tasks[name]
                if task.done:
                    continue
                if at > self.horizon:
                    self._push(at, name, "io")  # keep it queued for unwinding
                    break
                self.now = at
                self._grant(task)
        finally:
            self._unwind()
        for task in self._tasks.values():
            if task.error is not None:
                raise RuntimeError(f"simulated task {task.name} failed") from task.error

    def _grant(self, task: _Task) -> None:
        task.baton.release()
        self._main_baton.acquire()

    def _unwind(self) -> None:
        self._stopping = True
        for task in self._tasks.values():
            if not task.done:
                self._grant(task)
        for task in self._tasks.values():
            assert task.thread is not None
            task.thread.join(timeout=10.0)
            if task.thread.is_alive():
                raise RuntimeError(f"simulated task {task.name} failed to stop")


class SimClock:
    """Per-task clock face over the shared kernel."""

    def __init__(self, kernel: VirtualKernel, name: str):
        self._kernel = kernel
        self._name = name

    def now(self) -> float:
        return self._kernel.now

    def sleep(self, duration: float) -> None:
        self._kernel.advance(self._name, duration, "sleep")

    def time_of_day(self, timestamp: float) -> float:
        return timestamp % SECONDS_PER_DAY


class TimedBackend:
    """Charges t_io of virtual time for every primitive directory operation."""

    def __init__(self, inner: Backend, kernel: VirtualKernel, name: str, t_io: float):
        self._inner = inner
        self._kernel = kernel
        self._name = name
        self._t_io = t_io

    def _charge(self):
        self._kernel.advance(self._name, self._t_io, "io")

    def exists(self, name):
        self._charge()
        return self._inner.exists(name)

    def read_text(self, name):
        self._charge()
        return self._inner.read_text(name)

    def read_tail(self, name, offset):
        self._charge()
        return self._inner.read_tail(name, offset)

    def write_atomic(self, name, data):
        self._charge()
        self._inner.write_atomic(name, data)

    def create_exclusive(self, name, data):
        self._charge()
        return self._inner.create_exclusive(name, data)

    def append_line(self, name, line):
        self._charge()
        self._inner.append_line(name, line)

    def remove(self, name):
        self._charge()
        self._inner.remove(name)

    def describe(self):
        return self._inner.describe()


class _SignalWatch:
    """Backend wrapper that timestamps the first removal of the signal file."""

    def __init__(self, inner: Backend, kernel: VirtualKernel):
        self._inner = inner
        self._kernel = kernel
        self.cleared_at: float | None = None

    def remove(self, name):
        self._inner.remove(name)
        if name == SIGNAL_FILE and self.cleared_at is None:
            self.cleared_at = self._kernel.now

    def __getattr__(self, attr):
        return getattr(self._inner, attr)


class ClockedObjective:
    """Wraps an objective so one evaluation consumes clock time, in
    checkpoint-sized slices with an intermittent stop check between them.

    Works over any clock: a :class:`SimClock` inside the kernel, or a plain
    :class:`idleclimb.clock.VirtualClock` when driving a single daemon."""

    def __init__(
        self,
        inner: Objective,
        clock,
        duration: float,
        checkpoint_fraction: float = 0.1,
    ):
        self._inner = inner
        self._clock = clock
        self._duration = duration
        self._slices = max(1, round(1.0 / checkpoint_fraction))
        self.length = inner.length
        self.level_count = inner.level_count
        self.cost_hint = inner.cost_hint

    @property
    def checkpoint_interval(self) -> float:
        return self._duration / self._slices

    def evaluate(self, config: Config, checkpoint=None) -> float:
        dt = self._duration / self._slices
        for i in range(self._slices):
            self._clock.sleep(dt)
            if checkpoint is not None and i < self._slices - 1:
                if not checkpoint((i + 1) / self._slices):
                    raise EvaluationAborted("evaluation interrupted")
        return self._inner.evaluate(config)


# ---------------------------------------------------------------------------
# Scenario model


@dataclass(frozen=True)
class SimWorker:
    """One logical machine: a relative speed and the intervals during which
    it is idle enough to contribute.  Interval ends model the user coming
    back, which kills in-flight work."""

    id: str
    speed_factor: float = 1.0
    availability: tuple[tuple[float, float], ...] = ((0.0, math.inf),)
    poll_interval: float = 600.0

    def __post_init__(self):
        if self.speed_factor <= 0:
            raise ValueError("speed_factor must be positive")
        last = -math.inf
        for start, end in self.availability:
            if start < last or end <= start:
                raise ValueError("availability intervals must be disjoint and ordered")
            last = end


@dataclass(frozen=True)
class SimConfig:
    t_eval: float = 1.0
    t_io: float = 0.001
    seed: int = 0
    horizon: float = 1e9
    stop: StopCondition = StopCondition(max_total_evaluations=1000)
    checkpoint_fraction: float = 0.1

    def __post_init__(self):
        if self.t_eval <= 0:
            raise ValueError("t_eval must be positive")
        if self.t_io < 0:
            raise ValueError("t_io must be non-negative")


@dataclass(frozen=True)
class JobSetup:
    objective: PhaseMaskObjective
    mode: OptimizerMode = OptimizerMode.CHANGE_MERGE
    init_config: str = "random"  # "zero" or "random"
    init_seed: int = 0
    job_id: str = "sim"

    def initial_config(self) -> Config:
        if self.init_config == "zero":
            return (0,) * self.objective.length
        rng = random.Random(self.init_seed)
        return tuple(
            rng.randrange(self.objective.level_count) for _ in range(self.objective.length)
        )


@dataclass(frozen=True)
class WorkerStats:
    id: str
    evaluations: int
    commits: int
    rejects_not_better: int
    rejects_conflict: int
    rejects_stale: int
    aborted: int
    loops: int
    kills: int
    quiesce_time: float | None


@dataclass(frozen=True)
class SpeedupReport:
    makespan: float
    evaluations_total: int
    commits: int
    wasted_duplicate: int
    wasted_outdated: int
    rejected_not_better: int
    aborted: int
    speedup: float
    ideal_speedup: float
    efficiency: float
    incomplete: bool
    clear_time: float | None
    final_version: int
    final_performance: float
    worker_stats: tuple[WorkerStats, ...]
    records: tuple[ProposalRecord, ...]

    def lines(self) -> list[str]:
        out = [
            f"makespan={self.makespan:.6f}",
            f"evaluations_total={self.evaluations_total}",
            f"commits={self.commits}",
            f"wasted_duplicate={self.wasted_duplicate}",
            f"wasted_outdated={self.wasted_outdated}",
            f"rejected_not_better={self.rejected_not_better}",
            f"aborted={self.aborted}",
            f"speedup={self.speedup:.6f}",
            f"ideal_speedup={self.ideal_speedup:.6f}",
            f"efficiency={self.efficiency:.6f}",
            f"incomplete={int(self.incomplete)}",
            f"final_version={self.final_version}",
            f"final_performance={self.final_performance:.17g}",
        ]
        return out


def ideal_speedup(fleet: Sequence[SimWorker], reference: str) -> float:
    """Sum of relative speeds over the reference machine's speed."""
    by_id = {w.id: w for w in fleet}
    if reference not in by_id:
        raise ValueError(f"reference worker {reference!r} not in fleet")
    ref_speed = by_id[reference].speed_factor
    return sum(w.speed_factor for w in fleet) / ref_speed


@dataclass
class _Events:
    stop_time: float | None = None
    quiesce: dict[str, float] = field(default_factory=dict)

    def note_stop(self, at: float) -> None:
        if self.stop_time is None or at < self.stop_time:
            self.stop_time = at


def run_sim(
    fleet: Sequence[SimWorker],
    setup: JobSetup,
    sim: SimConfig,
    *,
    kill_schedule: Sequence[tuple[str, float]] = (),
    clear_signal_at: float | None = None,
    backend: Backend | None = None,
) -> SpeedupReport:
    """Run the fleet against one job until a stop condition or the horizon.

    ``kill_schedule`` entries (worker id, time) inject user-activity events
    that cancel that worker's in-flight work at its next checkpoint.
    ``clear_signal_at`` schedules an operator deleting the signal file.
    ``backend`` swaps the in-memory directory for another implementation
    (used to check protocol equivalence against a real directory).
    """
    if not fleet:
        raise ValueError("fleet must not be empty")
    ids = [w.id for w in fleet]
    if len(set(ids)) != len(ids):
        raise ValueError("worker ids must be unique")
    for wid, _t in kill_schedule:
        if wid not in set(ids):
            raise ValueError(f"kill schedule names unknown worker {wid!r}")

    kernel = VirtualKernel(horizon=sim.horizon)
    store = _SignalWatch(backend if backend is not None else MemBackend("sim"), kernel)

    # Initialization happens before the fleet exists, off the virtual clock.
    setup_job = JobDirectory(backend=store, clock=SimClock(kernel, "<setup>"), job_id=setup.job_id)
    initialize(setup_job, setup.initial_config(), setup.objective)
    signal_set(setup_job)

    records: list[ProposalRecord] = []
    events = _Events()
    kills: dict[str, list[float]] = {}
    for wid, at in kill_schedule:
        kills.setdefault(wid, []).append(at)
    for times in kills.values():
        times.sort()
    stats: dict[str, dict] = {
        w.id: {
            "evaluations": 0, "commits": 0, "not_better": 0, "conflict": 0,
            "stale": 0, "aborted": 0, "loops": 0, "kills": 0, "quiesce": None,
        }
        for w in fleet
    }

    for w in fleet:
        kernel.spawn(w.id, _worker_body(w, kernel, store, setup, sim, records, events,
                                        kills.get(w.id, []), stats))
    if clear_signal_at is not None:
        kernel.spawn(
            "<operator>", _operator_body(kernel, store, setup, sim, clear_signal_at, events)
        )

    kernel.run()

    return _build_report(fleet, setup, sim, kernel, store, records, events, stats)


def _worker_body(w, kernel, store, setup, sim, records, events, kill_times, stats):
    def body():
        clock = SimClock(kernel, w.id)
        job = JobDirectory(
            backend=TimedBackend(store, kernel, w.id, sim.t_io), clock=clock, job_id=setup.job_id
        )
        duration = sim.t_eval * setup.objective.cost_hint / w.speed_factor
        objective = ClockedObjective(setup.objective, clock, duration, sim.checkpoint_fraction)
        rng = random.Random(f"{sim.seed}:{w.id}")
        my = stats[w.id]

        def absorb(report):
            my["evaluations"] += report.evaluations
            my["commits"] += report.commits
            my["not_better"] += report.rejects_by_kind["not_better"]
            my["conflict"] += report.rejects_by_kind["conflict"]
            my["stale"] += report.rejects_by_kind["stale"]
            my["aborted"] += report.aborted
            my["loops"] += 1

        for win_start, win_end in w.availability:
            if kernel.now < win_start:
                clock.sleep(win_start - kernel.now)
            while kernel.now < win_end:
                loop_start = kernel.now

                def cancelled(_start=loop_start, _end=win_end):
                    now = kernel.now
                    if now >= _end:
                        return True
                    return any(_start < k <= now for k in kill_times)

                report = work_loop(
                    job, w.id, objective, setup.mode, sim.stop,
                    cancelled, rng=rng, observer=records.append,
                )
                absorb(report)
                if report.exit_reason in ("stop_condition", "stagnation"):
                    events.note_stop(kernel.now)
                    my["quiesce"] = kernel.now
                    return
                if report.exit_reason == "signal_cleared":
                    my["quiesce"] = kernel.now
                    return
                # cancelled: user came back (window end) or an injected kill
                my["kills"] += 1
                if kernel.now >= win_end:
                    break
                clock.sleep(w.poll_interval)
        my["quiesce"] = kernel.now

    return body


def _operator_body(kernel, store, setup, sim, clear_at, events):
    def body():
        clock = SimClock(kernel, "<operator>")
        job = JobDirectory(
            backend=TimedBackend(store, kernel, "<operator>", sim.t_io), clock=clock,
            job_id=setup.job_id,
        )
        clock.sleep(clear_at)
        signal_clear(job)
        events.note_stop(kernel.now)

    return body


def _build_report(fleet, setup, sim, kernel, store, records, events, stats) -> SpeedupReport:
    commits = wasted_duplicate = wasted_outdated = rejected_not_better = 0
    seen: set[tuple[int, int, int]] = set()
    last_record_time = 0.0
    for rec in records:
        last_record_time = max(last_record_time, rec.time)
        key = (rec.base_version, rec.index, rec.new_value)
        if rec.outcome is Outcome.COMMITTED:
            commits += 1
        elif key in seen:
            wasted_duplicate += 1
        elif rec.outcome in (Outcome.REJECTED_CONFLICT, Outcome.REJECTED_STALE):
            wasted_outdated += 1
        else:
            rejected_not_better += 1
        seen.add(key)

    incomplete = events.stop_time is None
    if incomplete:
        makespan = min(sim.horizon, kernel.now) if kernel.now > 0 else sim.horizon
    else:
        makespan = max(events.stop_time, last_record_time)

    evaluations_total = len(records)
    aborted = sum(s["aborted"] for s in stats.values())
    ref_speed = max(w.speed_factor for w in fleet)
    reference = min(w.id for w in fleet if w.speed_factor == ref_speed)
    ideal = ideal_speedup(fleet, reference)
    ref_time = evaluations_total * sim.t_eval * setup.objective.cost_hint / ref_speed
    speedup = ref_time / makespan if makespan > 0 else 0.0
    efficiency = speedup / ideal if ideal > 0 else 0.0
    if efficiency > 1.0 + EFFICIENCY_TOLERANCE:
        raise AssertionError(
            f"efficiency {efficiency} exceeds 1: completed work cannot beat "
            f"the fleet's combined rate"
        )

    final = read_best(JobDirectory(backend=store, clock=SimClock(kernel, "<final>"),
                                   job_id=setup.job_id))
    worker_stats = tuple(
        WorkerStats(
            id=w.id,
            evaluations=stats[w.id]["evaluations"],
            commits=stats[w.id]["commits"],
            rejects_not_better=stats[w.id]["not_better"],
            rejects_conflict=stats[w.id]["conflict"],
            rejects_stale=stats[w.id]["stale"],
            aborted=stats[w.id]["aborted"],
            loops=stats[w.id]["loops"],
            kills=stats[w.id]["kills"],
            quiesce_time=stats[w.id]["quiesce"],
        )
        for w in sorted(fleet, key=lambda w: w.id)
    )
    return SpeedupReport(
        makespan=makespan,
        evaluations_total=evaluations_total,
        commits=commits,
        wasted_duplicate=wasted_duplicate,
        wasted_outdated=wasted_outdated,
        rejected_not_better=rejected_not_better,
        aborted=aborted,
        speedup=speedup,
        ideal_speedup=ideal,
        efficiency=efficiency,
        incomplete=incomplete,
        clear_time=store.cleared_at,
        final_version=final.version,
        final_performance=final.performance,
        worker_stats=worker_stats,
        records=tuple(records),
    )


# ---------------------------------------------------------------------------
# Canned studies


def homogeneous_fleet(count: int, *, poll_interval: float = 600.0) -> tuple[SimWorker, ...]:
    return tuple(SimWorker(id=f"w{i:03d}", poll_interval=poll_interval) for i in range(count))


def sweep_fleet_size(
    max_p: int, sim: SimConfig, setup: JobSetup | None = None
) -> list[tuple[int, SpeedupReport]]:
    """Efficiency as the fleet grows from 1 to max_p identical machines."""
    if max_p < 1:
        raise ValueError("max_p must be at least 1")
    setup = setup or default_setup()
    rows = []
    for p in range(1, max_p + 1):
        rows.append((p, run_sim(homogeneous_fleet(p), setup, sim)))
    return rows


def default_setup(
    n: int = 16, levels: int = 4, target_order: int = 3,
    mode: OptimizerMode = OptimizerMode.CHANGE_MERGE, init_seed: int = 0,
) -> JobSetup:
    return JobSetup(
        objective=PhaseMaskObjective(length=n, level_count=levels, target_order=target_order),
        mode=mode,
        init_config="random",
        init_seed=init_seed,
    )


@dataclass(frozen=True)
class InterruptionReport:
    baseline: SpeedupReport
    interrupted: SpeedupReport
    versions_gapless: bool
    commits_after_kill_latency: int
    survivor_rate_baseline: float
    survivor_rate_interrupted: float


def interruption_test(
    fleet: Sequence[SimWorker],
    kill_schedule: Sequence[tuple[str, float]],
    sim: SimConfig,
    setup: JobSetup | None = None,
) -> InterruptionReport:
    """Compare a run against the same run with injected user-activity kills.

    Checks that the best-record version sequence stays gapless, that no
    worker commits after a kill once the cancellation latency has passed,
    and reports the surviving workers' commit rates for comparison.
    """
    setup = setup or default_setup()
    baseline = run_sim(fleet, setup, sim)
    interrupted = run_sim(fleet, setup, sim, kill_schedule=kill_schedule)

    versions = sorted(
        rec.committed_version
        for rec in interrupted.records
        if rec.outcome is Outcome.COMMITTED
    )
    gapless = versions == list(range(1, interrupted.final_version + 1))

    # After a kill, the worker must stay quiet until its next poll rejoin.
    # Cancellation itself may lag by one checkpoint interval plus a little
    # coordination time for an already-evaluated proposal racing its merge.
    killed_ids = {wid for wid, _ in kill_schedule}
    slowest = min(w.speed_factor for w in fleet)
    grace = sim.t_eval / slowest * sim.checkpoint_fraction + 16 * sim.t_io
    late = 0
    by_worker: dict[str, list[float]] = {}
    for wid, at in kill_schedule:
        by_worker.setdefault(wid, []).append(at)
    for rec in interrupted.records:
        if rec.outcome is not Outcome.COMMITTED:
            continue
        for at in by_worker.get(rec.worker, []):
            rejoin = at + _poll_of(fleet, rec.worker)
            if at + grace < rec.time <= rejoin:
                late += 1

    def survivor_rate(report: SpeedupReport) -> float:
        evals = sum(s.evaluations for s in report.worker_stats if s.id not in killed_ids)
        comm = sum(s.commits for s in report.worker_stats if s.id not in killed_ids)
        return comm / evals if evals else 0.0

    return InterruptionReport(
        baseline=baseline,
        interrupted=interrupted,
        versions_gapless=gapless,
        commits_after_kill_latency=late,
        survivor_rate_baseline=survivor_rate(baseline),
        survivor_rate_interrupted=survivor_rate(interrupted),
    )


def _poll_of(fleet, wid: str) -> float:
    for w in fleet:
        if w.id == wid:
            return w.poll_interval
    raise ValueError(wid)


# ---------------------------------------------------------------------------
# Scenario files and command line


@dataclass(frozen=True)
class Scenario:
    fleet: tuple[SimWorker, ...]
    setup: JobSetup
    sim: SimConfig
    kill_schedule: tuple[tuple[str, float], ...] = ()
    clear_signal_at: float | None = None


def _parse_interval(token: str) -> tuple[float, float]:
    lo, hi = token.split(":", 1)
    return (float(lo), math.inf if hi in ("inf", "") else float(hi))


def _parse_worker(value: str) -> SimWorker:
    fields = dict(tok.split("=", 1) for tok in value.split())
    availability: tuple[tuple[float, float], ...] = ((0.0, math.inf),)
    if "avail" in fields:
        availability = tuple(_parse_interval(t) for t in fields["avail"].split(","))
    return SimWorker(
        id=fields["id"],
        speed_factor=float(fields.get("speed", 1.0)),
        availability=availability,
        poll_interval=float(fields.get("poll", 600.0)),
    )


def parse_scenario(text: str) -> Scenario:
    """Parse the key=value scenario format (repeated worker= and kill= lines)."""
    values: dict[str, str] = {}
    workers: list[SimWorker] = []
    kills: list[tuple[str, float]] = []
    for i, raw in enumerate(text.splitlines()):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"scenario line {i + 1}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key == "worker":
            workers.append(_parse_worker(value))
        elif key == "kill":
            wid, at = value.rsplit("@", 1)
            kills.append((wid.strip(), float(at)))
        else:
            values[key] = value.strip()

    if not workers:
        raise ValueError("scenario defines no worker= lines")
    setup = JobSetup(
        objective=PhaseMaskObjective(
            length=int(values.get("n", 16)),
            level_count=int(values.get("levels", 4)),
            target_order=int(values.get("target_order", 3)),
        ),
        mode=OptimizerMode.parse(values.get("mode", "change_merge")),
        init_config=values.get("init_config", "random"),
        init_seed=int(values.get("init_seed", 0)),
        job_id=values.get("job_id", "sim"),
    )
    sim = SimConfig(
        t_eval=float(values.get("t_eval", 1.0)),
        t_io=float(values.get("t_io", 0.001)),
        seed=int(values.get("seed", 0)),
        horizon=float(values.get("horizon", 1e9)),
        stop=StopCondition(
            max_total_evaluations=int(values["stop_max_evals"])
            if "stop_max_evals" in values
            else None,
            target_performance=float(values["stop_target"]) if "stop_target" in values else None,
            stagnation_proposals=int(values["stop_stagnation"])
            if "stop_stagnation" in values
            else None,
        ),
        checkpoint_fraction=float(values.get("checkpoint_fraction", 0.1)),
    )
    clear_at = float(values["clear_signal_at"]) if "clear_signal_at" in values else None
    return Scenario(
        fleet=tuple(workers),
        setup=setup,
        sim=sim,
        kill_schedule=tuple(kills),
        clear_signal_at=clear_at,
    )


def _write_sweep_csv(path: str, rows: list[tuple[int, SpeedupReport]]) -> None:
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["p", "speedup", "efficiency", "wasted_duplicate", "wasted_outdated"])
        for p, report in rows:
            writer.writerow(
                [p, f"{report.speedup:.6f}", f"{report.efficiency:.6f}",
                 report.wasted_duplicate, report.wasted_outdated]
            )


def main(argv: Sequence[str] | None = None) -> int:
    import argparse

    parser = argparse.ArgumentParser(prog="idleclimb sim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario file")
    p_run.add_argument("--scenario", required=True)

    p_sweep = sub.add_parser("sweep", help="efficiency sweep over fleet sizes 1..max-p")
    p_sweep.add_argument("--max-p", type=int, required=True, dest="max_p")
    p_sweep.add_argument("--t-eval", type=float, default=1.0, dest="t_eval")
    p_sweep.add_argument("--t-io", type=float, default=0.001, dest="t_io")
    p_sweep.add_argument("--max-evals", type=int, default=1000, dest="max_evals")
    p_sweep.add_argument("--seed", type=int, default=1)
    p_sweep.add_argument("--n", type=int, default=16)
    p_sweep.add_argument("--levels", type=int, default=4)
    p_sweep.add_argument("--target-order", type=int, default=3, dest="target_order")
    p_sweep.add_argument("--mode", default="change_merge")
    p_sweep.add_argument("--csv", default=None)

    args = parser.parse_args(argv)

    if args.command == "run":
        try:
            with open(args.scenario, "r", encoding="utf-8") as fh:
                scenario = parse_scenario(fh.read())
        except (OSError, ValueError, KeyError) as exc:
            print(f"error=scenario {exc}", file=sys.stderr)
            return 2
        report = run_sim(
            scenario.fleet,
            scenario.setup,
            scenario.sim,
            kill_schedule=scenario.kill_schedule,
            clear_signal_at=scenario.clear_signal_at,
        )
        for line in report.lines():
            print(line)
        return 0

    sim = SimConfig(
        t_eval=args.t_eval,
        t_io=args.t_io,
        seed=args.seed,
        stop=StopCondition(max_total_evaluations=args.max_evals),
    )
    setup = default_setup(
        n=args.n,
        levels=args.levels,
        target_order=args.target_order,
        mode=OptimizerMode.parse(args.mode),
        init_seed=args.seed,
    )
    rows = sweep_fleet_size(args.max_p, sim, setup)
    for p, report in rows:
        print(
            f"p={p} speedup={report.speedup:.6f} efficiency={report.efficiency:.6f} "
            f"evaluations={report.evaluations_total} commits={report.commits} "
            f"wasted_duplicate={report.wasted_duplicate} "
            f"wasted_outdated={report.wasted_outdated}"
        )
    if args.csv:
        _write_sweep_csv(args.csv, rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
