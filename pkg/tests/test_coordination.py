"""Shared-directory protocol: atomicity, CAS, locks, crash and race behavior."""

import multiprocessing
import os
import threading
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import CrashInjected, CrashInjectionBackend
from idleclimb.clock import VirtualClock, WallClock
from idleclimb.coordination import (
    BEST_FILE,
    LOCK_FILE,
    AlreadyInitializedError,
    BestState,
    ChangeProposal,
    Committed,
    FormatError,
    FsBackend,
    JobDirectory,
    LockContentionError,
    MemBackend,
    NotInitializedError,
    ShareUnreachableError,
    VersionConflict,
    WorkerTally,
    acquire_lock,
    append_tally,
    commit_update,
    parse_best,
    publish_initial,
    read_best,
    read_commit_count,
    read_commit_log,
    read_fleet_tally,
    read_manifest,
    release_lock,
    serialize_best,
    signal_clear,
    signal_exists,
    signal_set,
    write_manifest,
)


def state(version=0, config=(0, 0, 0, 0), performance=1.0, estimated=False,
          updated_by="t", updated_at=0.0):
    return BestState(version=version, config=tuple(config), performance=performance,
                     estimated=estimated, updated_by=updated_by, updated_at=updated_at)


def proposal(base_version=0, index=0, new_value=1, measured=1.5, delta=0.5, proposer="w"):
    return ChangeProposal(base_version=base_version, index=index, new_value=new_value,
                          measured_performance=measured, delta=delta, proposer=proposer)


class TestSignal:
    def test_set_then_exists(self, mem_job):
        job = mem_job()
        assert not signal_exists(job)
        signal_set(job)
        assert signal_exists(job)

    def test_set_is_idempotent(self, mem_job):
        job = mem_job()
        signal_set(job)
        signal_set(job)
        assert signal_exists(job)

    def test_clear_and_idempotence(self, mem_job):
        job = mem_job()
        signal_set(job)
        signal_clear(job)
        assert not signal_exists(job)
        signal_clear(job)  # no error
        assert not signal_exists(job)

    def test_unreachable_share_is_an_error_not_false(self):
        job = JobDirectory(backend=FsBackend("/nonexistent/share/job"),
                           clock=VirtualClock(), job_id="gone")
        with pytest.raises(ShareUnreachableError):
            signal_exists(job)

    def test_unwritable_directory_raises_with_path_context(self, tmp_path):
        # A path whose parent is a regular file fails even when running as
        # root (unlike permission bits).
        blocker = tmp_path / "not_a_dir"
        blocker.write_text("plain file")
        job = JobDirectory(backend=FsBackend(str(blocker / "job")),
                           clock=VirtualClock(), job_id="bad")
        with pytest.raises(ShareUnreachableError, match="job"):
            signal_set(job)

    def test_concurrent_clears_both_succeed(self, fs_job):
        job = fs_job()
        for _ in range(50):
            signal_set(job)
            errors = []

            def clear():
                try:
                    signal_clear(job)
                except Exception as exc:  # noqa: BLE001
                    errors.append(exc)

            threads = [threading.Thread(target=clear) for _ in range(2)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
            assert errors == []
            assert not signal_exists(job)


class TestBestRecord:
    def test_round_trip_exact(self):
        original = state(version=12, config=(3, 1, 2, 0, 1), performance=0.1 + 0.2,
                         estimated=True, updated_by="pc-7:991", updated_at=123.456789012345)
        parsed = parse_best(serialize_best(original))
        assert parsed == original  # bit-exact, including the float fields

    @given(st.floats(min_value=-1e300, max_value=1e300, allow_nan=False))
    @settings(max_examples=200)
    def test_performance_serialization_value_exact(self, value):
        record = state(version=1, performance=value, estimated=True)
        assert parse_best(serialize_best(record)).performance == value

    def test_read_missing_is_not_initialized(self, mem_job):
        with pytest.raises(NotInitializedError):
            read_best(mem_job())

    def test_publish_initial_then_read(self, mem_job):
        job = mem_job()
        publish_initial(job, state(performance=0.25))
        got = read_best(job)
        assert got.version == 0 and got.performance == 0.25 and not got.estimated

    def test_double_initialize_rejected(self, mem_job):
        job = mem_job()
        publish_initial(job, state())
        with pytest.raises(AlreadyInitializedError):
            publish_initial(job, state())
        publish_initial(job, state(performance=2.0), force=True)
        assert read_best(job).performance == 2.0

    def test_corrupt_checksum_rejected_naming_line(self, mem_job):
        job = mem_job()
        publish_initial(job, state())
        text = job.backend.read_text(BEST_FILE).replace("performance=1", "performance=2")
        job.backend.write_atomic(BEST_FILE, text)
        with pytest.raises(FormatError, match="checksum"):
            read_best(job)

    def test_malformed_line_named(self):
        with pytest.raises(FormatError, match="line 1"):
            parse_best("garbage without equals\n")

    def test_missing_checksum_line(self):
        with pytest.raises(FormatError, match="checksum"):
            parse_best("version=0\n")

    def test_version_zero_cannot_be_estimated(self):
        with pytest.raises(ValueError):
            state(version=0, estimated=True)

    def test_non_finite_performance_rejected(self):
        with pytest.raises(ValueError):
            state(performance=float("nan"))
        with pytest.raises(ValueError):
            state(performance=float("inf"))


class TestCommit:
    def test_cas_success(self, mem_job):
        job = mem_job()
        publish_initial(job, state(performance=1.0))
        result = commit_update(job, 0, state(version=1, performance=1.5, updated_by="w"),
                               change=proposal())
        assert isinstance(result, Committed)
        assert read_best(job).version == 1
        assert read_commit_count(job) == 1

    def test_cas_conflict_leaves_file_unchanged(self, mem_job):
        job = mem_job()
        publish_initial(job, state(performance=1.0))
        for v in range(5):
            commit_update(job, v, state(version=v + 1, performance=1.0 + v + 1))
        before = job.backend.read_text(BEST_FILE)
        result = commit_update(job, 3, state(version=4, performance=9.0))
        assert isinstance(result, VersionConflict)
        assert result.current.version == 5
        assert job.backend.read_text(BEST_FILE) == before

    def test_version_precondition(self, mem_job):
        job = mem_job()
        publish_initial(job, state())
        with pytest.raises(ValueError):
            commit_update(job, 0, state(version=2, performance=2.0))

    def test_commit_log_format(self, mem_job):
        job = mem_job()
        publish_initial(job, state(performance=1.0))
        commit_update(job, 0, state(version=1, performance=1.5),
                      change=proposal(index=2, new_value=1, delta=0.5, proposer="pc1"))
        log = read_commit_log(job)
        assert log == [(1, 2, 1, 0.5, "pc1")]

    def test_reader_never_sees_torn_record(self, fs_job):
        """One writer committing, two readers hammering read_best: every read
        parses cleanly and versions never go backwards (1000+ reads)."""
        job = fs_job()
        publish_initial(job, state(performance=0.0))
        stop = threading.Event()
        failures = []
        read_counts = [0, 0]

        def reader(slot):
            last = -1
            while not stop.is_set() or read_counts[slot] < 1000:
                try:
                    got = read_best(job)
                except FormatError as exc:
                    failures.append(exc)
                    break
                if got.version < last:
                    failures.append(AssertionError("version went backwards"))
                    break
                last = got.version
                read_counts[slot] += 1
                if read_counts[slot] >= 2000:
                    break

        def writer():
            for v in range(300):
                commit_update(job, v, state(version=v + 1, performance=float(v + 1),
                                            updated_by="writer", updated_at=float(v)))
            stop.set()

        threads = [threading.Thread(target=reader, args=(i,)) for i in range(2)]
        wt = threading.Thread(target=writer)
        for t in threads:
            t.start()
        wt.start()
        wt.join()
        for t in threads:
            t.join()
        assert failures == []
        assert sum(read_counts) >= 1000
        assert read_best(job).version == 300


class TestLock:
    def test_acquire_creates_lock_file(self, mem_job):
        job = mem_job()
        handle = acquire_lock(job, "a", stale_after=30)
        assert job.backend.exists(LOCK_FILE)
        release_lock(job, handle)
        assert not job.backend.exists(LOCK_FILE)

    def test_fresh_lock_excludes_until_deadline(self, mem_job):
        job = mem_job()
        acquire_lock(job, "b", stale_after=1000)
        with pytest.raises(LockContentionError, match="held by b"):
            acquire_lock(job, "a", stale_after=1000, deadline=1.0, backoff=0.1)

    def test_stale_lock_broken_and_logged(self, mem_job, caplog):
        job = mem_job()
        job.clock.sleep(500.0)  # now = 500
        stale = acquire_lock(job, "dead", stale_after=30)
        del stale
        job.clock.sleep(300.0)  # 10x older than stale_after
        with caplog.at_level("WARNING"):
            handle = acquire_lock(job, "alive", stale_after=30)
        assert handle.owner == "alive"
        assert any("breaking stale lock" in r.message for r in caplog.records)

    def test_release_after_break_is_noop(self, mem_job, caplog):
        job = mem_job()
        handle = acquire_lock(job, "a", stale_after=30)
        job.clock.sleep(100.0)
        other = acquire_lock(job, "b", stale_after=30)  # breaks a's stale lock
        with caplog.at_level("WARNING"):
            release_lock(job, handle)  # must not remove b's lock
        assert job.backend.exists(LOCK_FILE)
        release_lock(job, other)
        assert not job.backend.exists(LOCK_FILE)

    def test_double_release_is_noop(self, mem_job):
        job = mem_job()
        handle = acquire_lock(job, "a", stale_after=30)
        release_lock(job, handle)
        release_lock(job, handle)  # second call: warning only

    def test_kill_between_acquire_and_write_recovers(self, tmp_path):
        """A worker killed while holding the lock must not wedge the fleet:
        the next committer breaks the stale lock and proceeds, and the best
        record still holds the pre-crash value."""
        path = str(tmp_path / "job")
        job = JobDirectory.create(path, "kill")
        publish_initial(job, state(performance=1.0))

        ready = multiprocessing.Event()
        child = multiprocessing.Process(target=_hold_lock_forever, args=(path, ready))
        child.start()
        assert ready.wait(timeout=10.0)
        os.kill(child.pid, 9)
        child.join(timeout=10.0)

        assert read_best(job).performance == 1.0  # pre-crash record intact
        result = commit_update(job, 0, state(version=1, performance=2.0),
                               stale_after=0.5, backoff=0.05)
        assert isinstance(result, Committed)
        assert read_best(job).version == 1


def _hold_lock_forever(path, ready):
    job = JobDirectory(backend=FsBackend(path), clock=WallClock(), job_id="kill")
    acquire_lock(job, "doomed", stale_after=0.5)
    ready.set()
    time.sleep(60.0)


class TestCrashInjection:
    def test_crash_at_every_op_leaves_valid_committed_record(self, tmp_path):
        """Deterministic sweep over every primitive-op boundary inside
        commit_update; the stored record must always parse and equal a
        previously committed record (the big randomized fuzz lives in the
        acceptance suite)."""
        for fail_after in range(0, 9):
            path = str(tmp_path / f"j{fail_after}")
            plain = JobDirectory.create(path, "crash")
            publish_initial(plain, state(performance=1.0))
            committed = {serialize_best(state(performance=1.0))}
            next_state = state(version=1, performance=2.0)
            wrapped = JobDirectory(
                backend=CrashInjectionBackend(FsBackend(path), fail_after),
                clock=VirtualClock(), job_id="crash",
            )
            try:
                result = commit_update(wrapped, 0, next_state, change=proposal())
                if isinstance(result, Committed):
                    committed.add(serialize_best(next_state))
            except CrashInjected:
                # The rename is the commit point; landing is also valid.
                committed.add(serialize_best(next_state))
            stored = read_best(plain)
            assert serialize_best(stored) in committed
            # Recovery: a later writer breaks any leftover lock and commits.
            follow_up = state(version=stored.version + 1, performance=9.0, updated_by="next")
            recovery_clock = VirtualClock(1000.0)
            recovered = JobDirectory(backend=FsBackend(path), clock=recovery_clock,
                                     job_id="crash")
            result = commit_update(recovered, stored.version, follow_up, stale_after=30)
            assert isinstance(result, Committed)


class TestCasSoundness:
    def test_concurrent_threads_one_winner_per_version(self, tmp_path):
        # Real clock: contention backoff and stale-age math need real sleeps
        # once several threads race the same lock.
        job = JobDirectory.create(str(tmp_path / "cas"), "cas")
        publish_initial(job, state(performance=0.0))
        rounds = 25
        workers = 4
        outcomes = [[None] * workers for _ in range(rounds)]
        barrier = threading.Barrier(workers)

        def contender(slot):
            for r in range(rounds):
                barrier.wait()
                result = commit_update(
                    job, r, state(version=r + 1, performance=float(r + 1),
                                  updated_by=f"t{slot}"),
                    backoff=0.002,
                )
                outcomes[r][slot] = result

        threads = [threading.Thread(target=contender, args=(i,)) for i in range(workers)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        for r in range(rounds):
            wins = [o for o in outcomes[r] if isinstance(o, Committed)]
            losses = [o for o in outcomes[r] if isinstance(o, VersionConflict)]
            assert len(wins) == 1, f"round {r}: {len(wins)} winners"
            assert len(losses) == workers - 1
        assert read_best(job).version == rounds


class TestTallyAndManifest:
    def test_tally_round_trip_and_fleet_sum(self, mem_job):
        job = mem_job()
        append_tally(job, "w1", WorkerTally(evaluations=3, commits=1))
        append_tally(job, "w2", WorkerTally(evaluations=5, rejects_stale=2))
        append_tally(job, "w1", WorkerTally(evaluations=9, commits=2, rejects_conflict=1))
        tallies = read_fleet_tally(job)
        assert tallies["w1"].evaluations == 9 and tallies["w1"].commits == 2
        assert tallies["w2"].rejects_stale == 2
        assert sum(t.evaluations for t in tallies.values()) == 14

    def test_tally_lines_do_not_count_as_commits(self, mem_job):
        job = mem_job()
        publish_initial(job, state(performance=1.0))
        append_tally(job, "w1", WorkerTally(evaluations=1))
        commit_update(job, 0, state(version=1, performance=2.0), change=proposal())
        append_tally(job, "w1", WorkerTally(evaluations=2))
        assert read_commit_count(job) == 1

    def test_manifest_round_trip(self, fs_job):
        job = fs_job(job_id="jobbie")
        write_manifest(job, {"objective": "phase_mask", "n": "8", "levels": "2",
                             "target_order": "1", "stop_max_evals": "100"})
        params = read_manifest(job)
        assert params["job_id"] == "jobbie"
        assert params["n"] == "8" and params["stop_max_evals"] == "100"

    def test_open_requires_manifest_job_id(self, tmp_path):
        path = tmp_path / "j"
        path.mkdir()
        (path / "manifest.dat").write_text("objective=phase_mask\n")
        with pytest.raises(FormatError, match="job_id"):
            JobDirectory.open(str(path))

    def test_open_reads_job_id(self, tmp_path):
        job = JobDirectory.create(str(tmp_path / "j"), "the-job")
        write_manifest(job, {})
        assert JobDirectory.open(str(tmp_path / "j")).job_id == "the-job"


class TestMemBackendSemantics:
    def test_matches_fs_for_tail_reads(self, tmp_path):
        mem = MemBackend()
        fs = FsBackend(str(tmp_path))
        for backend in (mem, fs):
            backend.append_line("log", "one")
            backend.append_line("log", "two")
        m_text, m_off = mem.read_tail("log", 0)
        f_text, f_off = fs.read_tail("log", 0)
        assert m_text == f_text and m_off == f_off
        mem.append_line("log", "three")
        fs.append_line("log", "three")
        assert mem.read_tail("log", m_off) == fs.read_tail("log", f_off)

    def test_create_exclusive(self):
        mem = MemBackend()
        assert mem.create_exclusive("x", "1")
        assert not mem.create_exclusive("x", "2")
        assert mem.read_text("x") == "1"
