"""Polled job records and a bounded worker pool.

Long engine operations (training, meshing, refinement) run off the HTTP
request thread.  Each job is a JobRecord whose state only moves forward:
queued -> running -> done | failed.  Clients poll GET /jobs/{id}; the
record is safe to read concurrently with the worker finishing it.
"""
from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor

from ..errors import DrivedeskError, InvalidParams, NotFound

JOB_STATES = ("queued", "running", "done", "failed")
_ORDER = {state: index for index, state in enumerate(JOB_STATES)}


class JobRecord:
    """One asynchronous operation; transitions are forward-only."""

    def __init__(self, job_id: str, operation: str, params: dict) -> None:
        self.id = job_id
        self.operation = operation
        self.params = dict(params)
        self.state = "queued"
        self.result: dict | None = None
        self.result_ids: tuple = ()
        self.error: str | None = None
        self._lock = threading.Lock()

    def _advance(self, state: str) -> None:
        if _ORDER[state] <= _ORDER[self.state]:
            raise InvalidParams(
                f"job {self.id} cannot move {self.state!r} -> {state!r}: "
                "states only advance"
            )
        self.state = state

    def mark_running(self) -> None:
        with self._lock:
            self._advance("running")

    def mark_done(self, result: dict, result_ids) -> None:
        ids = tuple(str(i) for i in result_ids)
        if not ids:
            raise InvalidParams("a finished job must reference result artifacts")
        with self._lock:
            self._advance("done")
            self.result = result
            self.result_ids = ids

    def mark_failed(self, error: str) -> None:
        with self._lock:
            self._advance("failed")
            self.error = str(error)

    def to_jsonable(self) -> dict:
        with self._lock:
            return {
                "job_id": self.id,
                "operation": self.operation,
                "params": self.params,
                "state": self.state,
                "result": self.result,
                "result_ids": list(self.result_ids),
                "error": self.error,
            }


class JobQueue:
    """Bounded pool executing job functions and tracking their records.

    A job function receives the JobRecord's params dict and returns
    ``(result_payload, result_ids)``.  Engine errors mark the job failed;
    they never propagate into the pool.
    """

    def __init__(self, workers: int = 2) -> None:
        if workers < 1:
            raise InvalidParams("job queue needs at least one worker")
        self._pool = ThreadPoolExecutor(max_workers=workers)
        self._records: dict = {}
        self._lock = threading.Lock()
        self._counter = 0

    def submit(self, operation: str, params: dict, fn) -> JobRecord:
        with self._lock:
            record = JobRecord(f"j{self._counter}", operation, params)
            self._counter += 1
            self._records[record.id] = record

        def run() -> None:
            record.mark_running()
            try:
                result, ids = fn(record.params)
                record.mark_done(result, ids)
            except DrivedeskError as exc:
                record.mark_failed(f"{type(exc).__name__}: {exc}")
            except Exception as exc:  # noqa: BLE001 - pool must never die
                record.mark_failed(f"internal error: {exc}")

        self._pool.submit(run)
        return record

    def get(self, job_id: str) -> JobRecord:
        with self._lock:
            try:
                return self._records[job_id]
            except KeyError:
                raise NotFound(f"no job with id {job_id!r}") from None

    def shutdown(self) -> None:
        self._pool.shutdown(wait=True)
