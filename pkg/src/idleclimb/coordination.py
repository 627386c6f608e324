"""The shared-directory coordination protocol.

A job lives in one directory, usually a network share every participating
machine can reach.  Workers and the coordinating operator communicate only
through files in it:

``go.dat``
    Zero-byte presence signal.  Workers run while it exists; deleting it
    tells the whole fleet to stop.
``best.dat``
    The global best record: ``version=``, ``performance=``, ``estimated=``,
    ``updated_by=``, ``updated_at=``, ``n=``, ``config=`` (space-separated
    integers), ``checksum=`` (16 hex digits over all preceding bytes).
    Always replaced atomically, never edited in place.
``lock``
    Short-lived writer lock: ``owner=``, ``acquired_at=``, ``stale_after=``.
    Created exclusively; locks older than their ``stale_after`` are broken.
``manifest.dat``
    Immutable job description: ``job_id=``, objective parameters, stop
    parameters.
``changes.log``
    Append-only audit trail.  One ``version index new_value delta proposer``
    line per committed update, plus ``#tally`` progress lines from workers.
    Advisory: nothing reads it to decide correctness.

Ordinary file shares offer no compare-and-swap, so updates go through the
lock plus a write-to-temp-then-atomic-rename discipline, and every record
carries a checksum so a torn write is rejected instead of parsed.  All
operations are safe to call concurrently from independent processes; the
lock file is the only mutual exclusion there is.
"""

from __future__ import annotations

import hashlib
import itertools
import logging
import math
import os
import threading
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Protocol, Union

from .clock import Clock, WallClock

log = logging.getLogger(__name__)

SIGNAL_FILE = "go.dat"
BEST_FILE = "best.dat"
LOCK_FILE = "lock"
MANIFEST_FILE = "manifest.dat"
CHANGES_FILE = "changes.log"

DEFAULT_STALE_AFTER = 30.0
DEFAULT_LOCK_DEADLINE = 30.0
DEFAULT_LOCK_BACKOFF = 0.05

TALLY_PREFIX = "#tally"


class CoordinationError(Exception):
    """Base class for protocol failures."""


class ShareUnreachableError(CoordinationError):
    """The job directory cannot be reached or written."""


class NotInitializedError(CoordinationError):
    """best.dat does not exist; the job was never initialized."""


class AlreadyInitializedError(CoordinationError):
    """best.dat already exists and force was not requested."""


class FormatError(CoordinationError):
    """A protocol file failed to parse; the message names the bad line."""


class LockContentionError(CoordinationError):
    """A live lock could not be acquired before the deadline."""


# ---------------------------------------------------------------------------
# Directory backends


class Backend(Protocol):
    """Primitive file operations inside one job directory.

    Implementations must make ``write_atomic`` all-or-nothing for readers
    and ``create_exclusive`` fail when the name exists.
    """

    def exists(self, name: str) -> bool: ...

    def read_text(self, name: str) -> str: ...

    def read_tail(self, name: str, offset: int) -> tuple[str, int]: ...

    def write_atomic(self, name: str, data: str) -> None: ...

    def create_exclusive(self, name: str, data: str) -> bool: ...

    def append_line(self, name: str, line: str) -> None: ...

    def remove(self, name: str) -> None: ...

    def describe(self) -> str: ...


_tmp_counter = itertools.count()


class FsBackend:
    """A real directory on a local disk or a mounted share."""

    def __init__(self, path: str):
        self.path = os.fspath(path)

    def _tmp_name(self, name: str) -> str:
        # Unique per process, thread and call: concurrent writers must never
        # collide on scratch names.
        return self._full(
            f".{name}.{os.getpid()}.{threading.get_ident()}.{next(_tmp_counter)}.tmp"
        )

    def _check_dir(self, cause: Exception) -> Exception:
        if not os.path.isdir(self.path):
            return ShareUnreachableError(f"job directory unreachable: {self.path}")
        return ShareUnreachableError(f"I/O error in {self.path}: {cause}")

    def _full(self, name: str) -> str:
        return os.path.join(self.path, name)

    def exists(self, name: str) -> bool:
        if not os.path.isdir(self.path):
            raise ShareUnreachableError(f"job directory unreachable: {self.path}")
        return os.path.exists(self._full(name))

    def read_text(self, name: str) -> str:
        try:
            with open(self._full(name), "r", encoding="utf-8", newline="") as fh:
                return fh.read()
        except FileNotFoundError:
            raise
        except OSError as exc:
            raise self._check_dir(exc) from exc

    def read_tail(self, name: str, offset: int) -> tuple[str, int]:
        try:
            with open(self._full(name), "r", encoding="utf-8", newline="") as fh:
                fh.seek(offset)
                data = fh.read()
                return data, offset + len(data.encode("utf-8"))
        except FileNotFoundError:
            return "", offset
        except OSError as exc:
            raise self._check_dir(exc) from exc

    def write_atomic(self, name: str, data: str) -> None:
        tmp = self._tmp_name(name)
        try:
            with open(tmp, "w", encoding="utf-8", newline="") as fh:
                fh.write(data)
            os.replace(tmp, self._full(name))
        except OSError as exc:
            try:
                os.unlink(tmp)
            except OSError:
                pass
            raise self._check_dir(exc) from exc

    def create_exclusive(self, name: str, data: str) -> bool:
        # Write the content to a temp file first and hardlink it into place,
        # so a reader never sees a half-written exclusive file.
        tmp = self._tmp_name(name)
        try:
            with open(tmp, "w", encoding="utf-8", newline="") as fh:
                fh.write(data)
            try:
                os.link(tmp, self._full(name))
                return True
            except FileExistsError:
                return False
            finally:
                os.unlink(tmp)
        except OSError as exc:
            raise self._check_dir(exc) from exc

    def append_line(self, name: str, line: str) -> None:
        try:
            with open(self._full(name), "a", encoding="utf-8", newline="") as fh:
                fh.write(line + "\n")
        except OSError as exc:
            raise self._check_dir(exc) from exc

    def remove(self, name: str) -> None:
        try:
            os.unlink(self._full(name))
        except FileNotFoundError:
            pass
        except OSError as exc:
            raise self._check_dir(exc) from exc

    def describe(self) -> str:
        return self.path


class MemBackend:
    """In-memory directory with the same semantics, for tests and simulation."""

    def __init__(self, name: str = "<memory>"):
        self.name = name
        self._files: dict[str, str] = {}
        self._mutex = threading.Lock()

    def exists(self, name: str) -> bool:
        with self._mutex:
            return name in self._files

    def read_text(self, name: str) -> str:
        with self._mutex:
            try:
                return self._files[name]
            except KeyError:
                raise FileNotFoundError(name) from None

    def read_tail(self, name: str, offset: int) -> tuple[str, int]:
        with self._mutex:
            data = self._files.get(name, "")
            return data[offset:], len(data)

    def write_atomic(self, name: str, data: str) -> None:
        with self._mutex:
            self._files[name] = data

    def create_exclusive(self, name: str, data: str) -> bool:
        with self._mutex:
            if name in self._files:
                return False
            self._files[name] = data
            return True

    def append_line(self, name: str, line: str) -> None:
        with self._mutex:
            self._files[name] = self._files.get(name, "") + line + "\n"

    def remove(self, name: str) -> None:
        with self._mutex:
            self._files.pop(name, None)

    def describe(self) -> str:
        return self.name


# ---------------------------------------------------------------------------
# Records


@dataclass(frozen=True)
class BestState:
    """The versioned global best record stored in best.dat."""

    version: int
    config: tuple[int, ...]
    performance: float
    estimated: bool
    updated_by: str
    updated_at: float

    def __post_init__(self):
        if self.version < 0:
            raise ValueError("version must be non-negative")
        if not math.isfinite(self.performance):
            raise ValueError("performance must be finite")
        if self.version == 0 and self.estimated:
            raise ValueError("the initialization record cannot be estimated")


@dataclass(frozen=True)
class ChangeProposal:
    """A worker's candidate single-element change and its measured effect."""

    base_version: int
    index: int
    new_value: int
    measured_performance: float
    delta: float
    proposer: str


@dataclass(frozen=True)
class Committed:
    state: BestState


@dataclass(frozen=True)
class VersionConflict:
    current: BestState


CommitResult = Union[Committed, VersionConflict]


@dataclass(frozen=True)
class LockHandle:
    owner: str
    acquired_at: float
    stale_after: float


@dataclass(frozen=True)
class JobDirectory:
    """Immutable handle on one job's directory.

    Freely shareable across threads; all mutability lives in the files
    behind the backend.
    """

    backend: Backend
    clock: Clock
    job_id: str

    @property
    def path(self) -> str:
        return self.backend.describe()

    @staticmethod
    def open(path: str, clock: Clock | None = None) -> "JobDirectory":
        """Open an existing job directory, reading job_id from the manifest."""
        backend = FsBackend(path)
        clock = clock or WallClock()
        job = JobDirectory(backend=backend, clock=clock, job_id="")
        manifest = read_manifest(job)
        job_id = manifest.get("job_id")
        if not job_id:
            raise FormatError(f"manifest in {path} has no job_id line")
        return replace(job, job_id=job_id)

    @staticmethod
    def create(path: str, job_id: str, clock: Clock | None = None) -> "JobDirectory":
        os.makedirs(path, exist_ok=True)
        return JobDirectory(backend=FsBackend(path), clock=clock or WallClock(), job_id=job_id)


# ---------------------------------------------------------------------------
# Signal file


def signal_set(job: JobDirectory) -> None:
    """Create the presence signal.  Idempotent."""
    job.backend.create_exclusive(SIGNAL_FILE, "")


def signal_clear(job: JobDirectory) -> None:
    """Remove the presence signal.  Idempotent."""
    job.backend.remove(SIGNAL_FILE)


def signal_exists(job: JobDirectory) -> bool:
    """Presence of the signal right now.  An unreachable share raises instead
    of returning False, so callers can tell 'stop' from 'cannot tell'."""
    return job.backend.exists(SIGNAL_FILE)


# ---------------------------------------------------------------------------
# best.dat serialization


def _checksum(payload: str) -> str:
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def serialize_best(state: BestState) -> str:
    body = (
        f"version={state.version}\n"
        f"performance={state.performance:.17g}\n"
        f"estimated={1 if state.estimated else 0}\n"
        f"updated_by={state.updated_by}\n"
        f"updated_at={state.updated_at:.17g}\n"
        f"n={len(state.config)}\n"
        f"config={' '.join(str(v) for v in state.config)}\n"
    )
    return body + f"checksum={_checksum(body)}\n"


def parse_best(text: str) -> BestState:
    lines = text.splitlines(keepends=True)
    fields: dict[str, str] = {}
    body_end = None
    for i, raw in enumerate(lines):
        line = raw.rstrip("\n")
        if "=" not in line:
            raise FormatError(f"best.dat line {i + 1}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        if key == "checksum":
            body_end = i
            fields[key] = value
            break
        fields[key] = value
    if body_end is None:
        raise FormatError("best.dat: missing checksum line")
    expected = _checksum("".join(lines[:body_end]))
    if fields["checksum"] != expected:
        raise FormatError(
            f"best.dat line {body_end + 1}: checksum {fields['checksum']!r} "
            f"does not match contents"
        )
    try:
        n = int(fields["n"])
        config = tuple(int(v) for v in fields["config"].split())
        state = BestState(
            version=int(fields["version"]),
            config=config,
            performance=float(fields["performance"]),
            estimated=fields["estimated"] == "1",
            updated_by=fields["updated_by"],
            updated_at=float(fields["updated_at"]),
        )
    except KeyError as exc:
        raise FormatError(f"best.dat: missing {exc.args[0]}= line") from exc
    except ValueError as exc:
        raise FormatError(f"best.dat: {exc}") from exc
    if len(config) != n:
        raise FormatError(f"best.dat config line: expected {n} values, got {len(config)}")
    return state


def read_best(job: JobDirectory) -> BestState:
    """Read and verify the current global best record."""
    try:
        text = job.backend.read_text(BEST_FILE)
    except FileNotFoundError:
        raise NotInitializedError(
            f"{job.path}: best.dat missing; the job was never initialized"
        ) from None
    return parse_best(text)


def publish_initial(job: JobDirectory, state: BestState, force: bool = False) -> None:
    """Write the version-0 record.  Fails if one exists, unless forced."""
    data = serialize_best(state)
    if force:
        job.backend.write_atomic(BEST_FILE, data)
        return
    if not job.backend.create_exclusive(BEST_FILE, data):
        raise AlreadyInitializedError(f"{job.path}: best.dat already exists")


# ---------------------------------------------------------------------------
# Lock file


def _serialize_lock(handle: LockHandle) -> str:
    return (
        f"owner={handle.owner}\n"
        f"acquired_at={handle.acquired_at:.17g}\n"
        f"stale_after={handle.stale_after:.17g}\n"
    )


def _parse_lock(text: str) -> LockHandle | None:
    fields = {}
    for line in text.splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            fields[key] = value
    try:
        return LockHandle(
            owner=fields["owner"],
            acquired_at=float(fields["acquired_at"]),
            stale_after=float(fields["stale_after"]),
        )
    except (KeyError, ValueError):
        return None


def acquire_lock(
    job: JobDirectory,
    owner: str,
    stale_after: float = DEFAULT_STALE_AFTER,
    *,
    deadline: float = DEFAULT_LOCK_DEADLINE,
    backoff: float = DEFAULT_LOCK_BACKOFF,
) -> LockHandle:
    """Take the job's writer lock.

    A lock older than its own stale_after is assumed to belong to a dead
    process (a worker killed mid-commit); it is deleted and re-acquired, and
    the break is logged.
    """
    start = job.clock.now()
    while True:
        handle = LockHandle(owner=owner, acquired_at=job.clock.now(), stale_after=stale_after)
        if job.backend.create_exclusive(LOCK_FILE, _serialize_lock(handle)):
            return handle
        try:
            existing = _parse_lock(job.backend.read_text(LOCK_FILE))
        except FileNotFoundError:
            continue  # released between our attempt and the read; retry now
        if existing is not None and job.clock.now() - existing.acquired_at > existing.stale_after:
            log.warning(
                "%s: breaking stale lock held by %s (age %.1fs > %.1fs)",
                job.path,
                existing.owner,
                job.clock.now() - existing.acquired_at,
                existing.stale_after,
            )
            job.backend.remove(LOCK_FILE)
            continue
        if job.clock.now() - start >= deadline:
            holder = existing.owner if existing else "<unknown>"
            raise LockContentionError(
                f"{job.path}: lock held by {holder}, gave up after {deadline}s"
            )
        job.clock.sleep(backoff)


def release_lock(job: JobDirectory, handle: LockHandle) -> None:
    """Drop the lock if we still own it; a no-op (with a warning) otherwise."""
    try:
        existing = _parse_lock(job.backend.read_text(LOCK_FILE))
    except FileNotFoundError:
        log.warning("%s: lock already gone on release (broken as stale?)", job.path)
        return
    if existing is None or existing.owner != handle.owner or existing.acquired_at != handle.acquired_at:
        log.warning("%s: lock no longer ours on release; leaving it alone", job.path)
        return
    job.backend.remove(LOCK_FILE)


# ---------------------------------------------------------------------------
# Committing updates


def commit_update(
    job: JobDirectory,
    expected_version: int,
    new_state: BestState,
    *,
    change: ChangeProposal | None = None,
    stale_after: float = DEFAULT_STALE_AFTER,
    deadline: float = DEFAULT_LOCK_DEADLINE,
    backoff: float = DEFAULT_LOCK_BACKOFF,
) -> CommitResult:
    """Compare-and-swap on the best record.

    Under the lock: if the stored version equals expected_version, replace
    the record atomically and append the audit line; otherwise write nothing
    and return the freshly read current record.
    """
    if new_state.version != expected_version + 1:
        raise ValueError(
            f"new_state.version={new_state.version}, expected {expected_version + 1}"
        )
    handle = acquire_lock(
        job, new_state.updated_by, stale_after, deadline=deadline, backoff=backoff
    )
    try:
        current = read_best(job)
        if current.version != expected_version:
            return VersionConflict(current=current)
        job.backend.write_atomic(BEST_FILE, serialize_best(new_state))
        if change is not None:
            job.backend.append_line(
                CHANGES_FILE,
                f"{new_state.version} {change.index} {change.new_value} "
                f"{change.delta:.17g} {change.proposer}",
            )
        return Committed(state=new_state)
    finally:
        release_lock(job, handle)


def overwrite_update(
    job: JobDirectory,
    make_state: Callable[[BestState], BestState],
    *,
    change: ChangeProposal | None = None,
    stale_after: float = DEFAULT_STALE_AFTER,
) -> BestState:
    """Unconditional read-modify-write under the lock, no version check.

    This is the unsafe update style the double-read merge protocol exists to
    replace; it is kept for demonstrating the lost-update failure mode.
    """
    handle = acquire_lock(job, "overwrite", stale_after)
    try:
        current = read_best(job)
        new_state = make_state(current)
        job.backend.write_atomic(BEST_FILE, serialize_best(new_state))
        if change is not None:
            job.backend.append_line(
                CHANGES_FILE,
                f"{new_state.version} {change.index} {change.new_value} "
                f"{change.delta:.17g} {change.proposer}",
            )
        return new_state
    finally:
        release_lock(job, handle)


# ---------------------------------------------------------------------------
# Advisory tallies and audit trail


@dataclass(frozen=True)
class WorkerTally:
    """One worker's cumulative progress counters, flushed after every
    completed evaluation.  Advisory: stop conditions tolerate slack."""

    evaluations: int = 0
    commits: int = 0
    rejects_not_better: int = 0
    rejects_conflict: int = 0
    rejects_stale: int = 0

    def line(self, worker_id: str) -> str:
        return (
            f"{TALLY_PREFIX} {worker_id} evals={self.evaluations} "
            f"commits={self.commits} not_better={self.rejects_not_better} "
            f"conflict={self.rejects_conflict} stale={self.rejects_stale}"
        )


def append_tally(job: JobDirectory, worker_id: str, tally: WorkerTally) -> None:
    job.backend.append_line(CHANGES_FILE, tally.line(worker_id))


def _parse_tally_line(line: str) -> tuple[str, WorkerTally] | None:
    parts = line.split()
    if len(parts) != 7 or parts[0] != TALLY_PREFIX:
        return None
    try:
        values = dict(p.split("=", 1) for p in parts[2:])
        return parts[1], WorkerTally(
            evaluations=int(values["evals"]),
            commits=int(values["commits"]),
            rejects_not_better=int(values["not_better"]),
            rejects_conflict=int(values["conflict"]),
            rejects_stale=int(values["stale"]),
        )
    except (KeyError, ValueError):
        return None


class TallyReader:
    """Incrementally folds changes.log tally lines into per-worker totals.

    Tally counters are cumulative per worker, so only each worker's latest
    line matters; reading just the file tail keeps the per-check cost flat.
    """

    def __init__(self, job: JobDirectory):
        self._job = job
        self._offset = 0
        self._pending = ""
        self.per_worker: dict[str, WorkerTally] = {}

    def refresh(self) -> None:
        text, self._offset = self._job.backend.read_tail(CHANGES_FILE, self._offset)
        if not text:
            return
        text = self._pending + text
        lines = text.split("\n")
        self._pending = lines.pop()  # possibly incomplete final line
        for line in lines:
            parsed = _parse_tally_line(line)
            if parsed is not None:
                self.per_worker[parsed[0]] = parsed[1]

    def fleet_evaluations(self) -> int:
        return sum(t.evaluations for t in self.per_worker.values())


def read_fleet_tally(job: JobDirectory) -> dict[str, WorkerTally]:
    """One-shot scan of all tally lines (for status/report commands)."""
    reader = TallyReader(job)
    reader.refresh()
    return reader.per_worker


def read_commit_count(job: JobDirectory) -> int:
    """Number of committed updates recorded in the audit trail."""
    try:
        text = job.backend.read_text(CHANGES_FILE)
    except FileNotFoundError:
        return 0
    return sum(1 for line in text.splitlines() if line and not line.startswith("#"))


def read_commit_log(job: JobDirectory) -> list[tuple[int, int, int, float, str]]:
    """Parsed commit lines: (version, index, new_value, delta, proposer)."""
    try:
        text = job.backend.read_text(CHANGES_FILE)
    except FileNotFoundError:
        return []
    out = []
    for line in text.splitlines():
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 5:
            continue
        out.append((int(parts[0]), int(parts[1]), int(parts[2]), float(parts[3]), parts[4]))
    return out


# ---------------------------------------------------------------------------
# Manifest


def write_manifest(job: JobDirectory, params: Mapping[str, str]) -> None:
    lines = [f"job_id={job.job_id}"]
    lines += [f"{k}={v}" for k, v in params.items() if k != "job_id"]
    job.backend.write_atomic(MANIFEST_FILE, "\n".join(lines) + "\n")


def read_manifest(job: JobDirectory) -> dict[str, str]:
    try:
        text = job.backend.read_text(MANIFEST_FILE)
    except FileNotFoundError:
        raise FormatError(f"{job.path}: manifest.dat missing") from None
    params: dict[str, str] = {}
    for i, line in enumerate(text.splitlines()):
        if not line.strip() or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"manifest.dat line {i + 1}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        params[key] = value
    return params
