"""Distributed single-change hill climbing over the shared best record.

Each worker repeats: read the global best, pick one random element change,
evaluate the changed configuration, read the global best *again*, and merge.
The second read is what keeps concurrent workers from silently overwriting
each other's committed improvements.

Two merge modes exist for the concurrent case (other workers committed on
other elements while we were evaluating):

* ``REPLACE_IF_BETTER`` compares raw performance and, when it wins, replaces
  the whole configuration with our base-plus-change, dropping the concurrent
  improvements.
* ``CHANGE_MERGE`` re-applies our single change on top of the latest
  configuration and records the sum of the latest performance and our
  measured delta, flagged ``estimated`` because deltas are only additive if
  the changes do not interact.

A change to an element that *itself* moved concurrently is rejected in both
modes: replaying it over a different base value is meaningless.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping

from .coordination import (
    BestState,
    ChangeProposal,
    Committed,
    CoordinationError,
    JobDirectory,
    LockContentionError,
    ShareUnreachableError,
    TallyReader,
    WorkerTally,
    append_tally,
    commit_update,
    overwrite_update,
    publish_initial,
    read_best,
    signal_clear,
    signal_exists,
)
from .objective import Config, EvaluationAborted, Objective, neighbors, validate_config

log = logging.getLogger(__name__)

MERGE_MAX_RETRIES = 8
IO_RETRY_DEADLINE = 5.0
IO_RETRY_BACKOFF = 0.2


class OptimizerMode(Enum):
    REPLACE_IF_BETTER = "replace_if_better"
    CHANGE_MERGE = "change_merge"

    @staticmethod
    def parse(text: str) -> "OptimizerMode":
        try:
            return OptimizerMode(text.strip().lower())
        except ValueError:
            raise ValueError(f"unknown optimizer mode {text!r}") from None


class Outcome(Enum):
    COMMITTED = "committed"
    REJECTED_NOT_BETTER = "not_better"
    REJECTED_CONFLICT = "conflict"
    REJECTED_STALE = "stale"


@dataclass(frozen=True)
class MergeOutcome:
    kind: Outcome
    measured: float
    state: BestState | None = None  # the committed record, when kind is COMMITTED

    @property
    def new_version(self) -> int | None:
        return self.state.version if self.state is not None else None


@dataclass(frozen=True)
class StopCondition:
    """Any-of end conditions; all None means manual stop only.

    ``max_total_evaluations`` counts completed evaluations fleet-wide via the
    advisory tally lines, so it fires with a little slack, never exactly.
    ``stagnation_proposals`` triggers an exhaustive neighbor sweep after that
    many proposals without any fleet commit; the job stops only if the sweep
    proves no single-element change improves the current best.
    """

    max_total_evaluations: int | None = None
    target_performance: float | None = None
    stagnation_proposals: int | None = None

    def satisfied(self, best_performance: float, fleet_evaluations: int) -> bool:
        if self.max_total_evaluations is not None and fleet_evaluations >= self.max_total_evaluations:
            return True
        if self.target_performance is not None and best_performance >= self.target_performance:
            return True
        return False

    def manifest_params(self) -> dict[str, str]:
        params = {}
        if self.max_total_evaluations is not None:
            params["stop_max_evals"] = str(self.max_total_evaluations)
        if self.target_performance is not None:
            params["stop_target"] = f"{self.target_performance:.17g}"
        if self.stagnation_proposals is not None:
            params["stop_stagnation"] = str(self.stagnation_proposals)
        return params

    @staticmethod
    def from_manifest(params: Mapping[str, str]) -> "StopCondition":
        return StopCondition(
            max_total_evaluations=int(params["stop_max_evals"]) if "stop_max_evals" in params else None,
            target_performance=float(params["stop_target"]) if "stop_target" in params else None,
            stagnation_proposals=int(params["stop_stagnation"]) if "stop_stagnation" in params else None,
        )


@dataclass(frozen=True)
class ProposalRecord:
    """One completed proposal, as seen by a run-log observer."""

    worker: str
    time: float
    base_version: int
    index: int
    new_value: int
    measured: float
    outcome: Outcome
    committed_version: int | None = None
    # The performance actually stored on commit; differs from ``measured``
    # for estimated (additively merged) records.
    recorded_performance: float | None = None


@dataclass
class LoopReport:
    evaluations: int = 0
    commits: int = 0
    rejects_by_kind: dict[str, int] = field(
        default_factory=lambda: {"not_better": 0, "conflict": 0, "stale": 0}
    )
    aborted: int = 0
    exit_reason: str = ""


CancelCheck = Callable[[], bool]
Observer = Callable[[ProposalRecord], None]


def initialize(
    job: JobDirectory,
    initial_config: Config,
    objective: Objective,
    *,
    worker_id: str = "master",
    force: bool = False,
) -> BestState:
    """Evaluate the starting configuration and publish it as version 0.

    Initialization happens exactly once per job; a second call fails unless
    forced.
    """
    config = tuple(initial_config)
    validate_config(config, objective.length, objective.level_count)
    performance = objective.evaluate(config)
    state = BestState(
        version=0,
        config=config,
        performance=performance,
        estimated=False,
        updated_by=worker_id,
        updated_at=job.clock.now(),
    )
    publish_initial(job, state, force=force)
    return state


def propose(base: BestState, objective: Objective, rng: random.Random) -> tuple[int, int]:
    """Pick a uniformly random single-element change.

    The index is uniform over the configuration; the new value is uniform
    over the other ``L - 1`` levels.  Deterministic given the stream state.
    """
    if objective.level_count < 2:
        raise ValueError("cannot propose changes with fewer than two levels")
    n = len(base.config)
    index = rng.randrange(n)
    offset = rng.randrange(1, objective.level_count)
    new_value = (base.config[index] + offset) % objective.level_count
    return index, new_value


def check_stop_during_evaluation(job: JobDirectory, elapsed_fraction: float) -> bool:
    """Intermittent mid-evaluation check: keep going only while the signal is
    up.  An unreachable share reads as 'stop' so a dead link cannot strand a
    worker in a long computation."""
    del elapsed_fraction
    try:
        return signal_exists(job)
    except CoordinationError:
        return False


def evaluate_and_merge(
    job: JobDirectory,
    base: BestState,
    change: tuple[int, int],
    objective: Objective,
    mode: OptimizerMode,
    *,
    proposer: str = "worker",
    cancel: CancelCheck | None = None,
    max_retries: int = MERGE_MAX_RETRIES,
) -> MergeOutcome:
    """Evaluate one change against the base the caller read, then merge it
    against the freshly re-read global best.

    Raises :class:`EvaluationAborted` when a checkpoint (signal gone, or the
    caller's cancel check) interrupts the evaluation; nothing is written.
    """
    index, new_value = change
    candidate = base.config[:index] + (new_value,) + base.config[index + 1 :]

    def checkpoint(fraction: float) -> bool:
        if cancel is not None and cancel():
            return False
        return check_stop_during_evaluation(job, fraction)

    measured = objective.evaluate(candidate, checkpoint)
    # The evaluation may be long; re-check before touching the shared state
    # so a kill between evaluate and merge discards the result.
    if not checkpoint(1.0):
        raise EvaluationAborted("stop requested after evaluation")

    if measured <= base.performance:
        return MergeOutcome(Outcome.REJECTED_NOT_BETTER, measured)

    delta = measured - base.performance
    proposal = ChangeProposal(
        base_version=base.version,
        index=index,
        new_value=new_value,
        measured_performance=measured,
        delta=delta,
        proposer=proposer,
    )

    latest = read_best(job)
    for _ in range(max_retries + 1):
        if latest.version == base.version:
            new_state = BestState(
                version=latest.version + 1,
                config=candidate,
                performance=measured,
                estimated=False,
                updated_by=proposer,
                updated_at=job.clock.now(),
            )
        elif latest.config[index] != base.config[index]:
            # Someone changed the very element we modified; our measurement
            # no longer describes any reachable configuration.
            return MergeOutcome(Outcome.REJECTED_CONFLICT, measured)
        elif mode is OptimizerMode.CHANGE_MERGE:
            merged = latest.config[:index] + (new_value,) + latest.config[index + 1 :]
            new_state = BestState(
                version=latest.version + 1,
                config=merged,
                performance=latest.performance + delta,
                estimated=True,
                updated_by=proposer,
                updated_at=job.clock.now(),
            )
        else:  # REPLACE_IF_BETTER
            if measured <= latest.performance:
                return MergeOutcome(Outcome.REJECTED_STALE, measured)
            new_state = BestState(
                version=latest.version + 1,
                config=candidate,
                performance=measured,
                estimated=False,
                updated_by=proposer,
                updated_at=job.clock.now(),
            )
        try:
            result = commit_update(job, latest.version, new_state, change=proposal)
        except LockContentionError as exc:
            # Under extreme coordination load the commit may never get its
            # turn; the measured result is then just another wasted analysis.
            log.warning("%s: giving up on commit: %s", proposer, exc)
            return MergeOutcome(Outcome.REJECTED_STALE, measured)
        if isinstance(result, Committed):
            return MergeOutcome(Outcome.COMMITTED, measured, state=result.state)
        latest = result.current
    return MergeOutcome(Outcome.REJECTED_STALE, measured)


def naive_replace(
    job: JobDirectory,
    base: BestState,
    change: tuple[int, int],
    objective: Objective,
    *,
    proposer: str = "worker",
) -> BestState | None:
    """The no-second-read update: evaluate against ``base`` and, if better,
    overwrite whatever is stored with base-plus-change.

    Kept only to demonstrate the lost-update failure the double-read merge
    prevents.  Never used by :func:`work_loop`.
    """
    index, new_value = change
    candidate = base.config[:index] + (new_value,) + base.config[index + 1 :]
    measured = objective.evaluate(candidate)
    if measured <= base.performance:
        return None
    proposal = ChangeProposal(
        base_version=base.version,
        index=index,
        new_value=new_value,
        measured_performance=measured,
        delta=measured - base.performance,
        proposer=proposer,
    )

    def make(current: BestState) -> BestState:
        return BestState(
            version=current.version + 1,
            config=candidate,
            performance=measured,
            estimated=False,
            updated_by=proposer,
            updated_at=job.clock.now(),
        )

    return overwrite_update(job, make, change=proposal)


@dataclass(frozen=True)
class EstimateAudit:
    recorded: BestState
    exact_performance: float
    drift: float


def audit_estimate(job: JobDirectory, objective: Objective) -> EstimateAudit:
    """Re-evaluate the stored best configuration and report how far the
    recorded (possibly additively estimated) performance drifted from it."""
    state = read_best(job)
    exact = objective.evaluate(state.config)
    return EstimateAudit(recorded=state, exact_performance=exact, drift=abs(state.performance - exact))


def _io_retry(job: JobDirectory, fn: Callable[[], object]):
    start = job.clock.now()
    while True:
        try:
            return fn()
        except ShareUnreachableError:
            if job.clock.now() - start >= IO_RETRY_DEADLINE:
                raise
            job.clock.sleep(IO_RETRY_BACKOFF)


def work_loop(
    job: JobDirectory,
    worker_id: str,
    objective: Objective,
    mode: OptimizerMode,
    stop: StopCondition,
    cancel: CancelCheck | None = None,
    *,
    rng: random.Random | None = None,
    observer: Observer | None = None,
) -> LoopReport:
    """One worker's whole contribution to a job.

    Repeats check-signal / read-best / propose / evaluate / merge until the
    signal clears, a stop condition fires (in which case this worker clears
    the signal itself), or ``cancel`` reports true.  Transient share errors
    are retried briefly; a missing best.dat aborts with
    :class:`NotInitializedError`.
    """
    cancel = cancel or (lambda: False)
    rng = rng or random.Random()
    report = LoopReport()
    tally = WorkerTally()
    tallies = TallyReader(job)
    proposals_since_commit = 0
    last_seen_version: int | None = None

    def record(base: BestState, change: tuple[int, int], outcome: MergeOutcome) -> None:
        nonlocal tally, proposals_since_commit
        report.evaluations += 1
        if outcome.kind is Outcome.COMMITTED:
            report.commits += 1
            proposals_since_commit = 0
        else:
            report.rejects_by_kind[outcome.kind.value] += 1
            proposals_since_commit += 1
        tally = WorkerTally(
            evaluations=tally.evaluations + 1,
            commits=tally.commits + (outcome.kind is Outcome.COMMITTED),
            rejects_not_better=tally.rejects_not_better
            + (outcome.kind is Outcome.REJECTED_NOT_BETTER),
            rejects_conflict=tally.rejects_conflict + (outcome.kind is Outcome.REJECTED_CONFLICT),
            rejects_stale=tally.rejects_stale + (outcome.kind is Outcome.REJECTED_STALE),
        )
        _io_retry(job, lambda: append_tally(job, worker_id, tally))
        log.info(
            "t=%.3f %s: base v%d change (%d -> %d) %s",
            job.clock.now(),
            worker_id,
            base.version,
            change[0],
            change[1],
            outcome.kind.value,
        )
        if observer is not None:
            observer(
                ProposalRecord(
                    worker=worker_id,
                    time=job.clock.now(),
                    base_version=base.version,
                    index=change[0],
                    new_value=change[1],
                    measured=outcome.measured,
                    outcome=outcome.kind,
                    committed_version=outcome.new_version,
                    recorded_performance=(
                        outcome.state.performance if outcome.state is not None else None
                    ),
                )
            )

    def one_proposal(base: BestState, change: tuple[int, int]) -> MergeOutcome | None:
        """Evaluate and merge one change; None means the evaluation aborted."""
        try:
            outcome = evaluate_and_merge(
                job, base, change, objective, mode, proposer=worker_id, cancel=cancel
            )
        except EvaluationAborted:
            report.aborted += 1
            return None
        record(base, change, outcome)
        return outcome

    def stop_now(best: BestState) -> bool:
        _io_retry(job, tallies.refresh)
        return stop.satisfied(best.performance, tallies.fleet_evaluations())

    while True:
        if cancel():
            report.exit_reason = "cancelled"
            break
        if not _io_retry(job, lambda: signal_exists(job)):
            report.exit_reason = "signal_cleared"
            break
        base = read_best(job)
        if last_seen_version is None or base.version != last_seen_version:
            proposals_since_commit = 0
        last_seen_version = base.version
        if stop_now(base):
            _io_retry(job, lambda: signal_clear(job))
            report.exit_reason = "stop_condition"
            break

        if (
            stop.stagnation_proposals is not None
            and proposals_since_commit >= stop.stagnation_proposals
        ):
            verdict = _stagnation_sweep(job, base, objective, mode, one_proposal, cancel, stop_now)
            if verdict == "local_optimum":
                _io_retry(job, lambda: signal_clear(job))
                report.exit_reason = "stagnation"
                break
            if verdict in ("cancelled", "signal_cleared", "stop_condition"):
                if verdict == "stop_condition":
                    _io_retry(job, lambda: signal_clear(job))
                report.exit_reason = verdict
                break
            continue  # inconclusive: the best moved, or a sweep change committed

        change = propose(base, objective, rng)
        one_proposal(base, change)

    return report


def _stagnation_sweep(
    job: JobDirectory,
    base: BestState,
    objective: Objective,
    mode: OptimizerMode,
    one_proposal,
    cancel: CancelCheck,
    stop_now,
) -> str:
    """Exhaustively try every single-element change against ``base``.

    Returns "local_optimum" only when all n*(L-1) neighbors evaluated to
    not-better and the global best did not move meanwhile, i.e. the stored
    configuration is a proven local optimum.
    """
    clean = True
    for change in neighbors(objective, base.config):
        if cancel():
            return "cancelled"
        if not _io_retry(job, lambda: signal_exists(job)):
            return "signal_cleared"
        if stop_now(base):
            return "stop_condition"
        outcome = one_proposal(base, change)
        if outcome is None:
            # Aborted mid-evaluation; let the main loop re-check cancel and
            # signal state and exit with the accurate reason.
            return "inconclusive"
        if outcome.kind is not Outcome.REJECTED_NOT_BETTER:
            clean = False
            break
    if clean and read_best(job).version == base.version:
        return "local_optimum"
    return "inconclusive"
