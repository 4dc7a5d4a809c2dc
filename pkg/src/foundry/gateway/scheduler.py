"""FIFO admission scheduler with an in-flight cap and total-age timeouts.

The scheduler is a pure state machine: callers feed it arrivals, completions
and deadline expiries with explicit timestamps.  Drivers (virtual-time or
wall-clock) own the clock.  Event-ordering rule at equal timestamps:
completions are applied before deadline expiries, so a request finishing
exactly at the timeout boundary counts as completed (the drop rule is
strictly ``age > timeout``).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional


class RequestStatus(str, Enum):
    COMPLETED = "completed"
    TIMED_OUT_IN_QUEUE = "timed_out_in_queue"
    TIMED_OUT_IN_SERVICE = "timed_out_in_service"


class Shutdown(Exception):
    pass


@dataclass
class BenchRequestRecord:
    request_id: int
    stream_id: int
    arrival_ts: float
    start_ts: Optional[float] = None
    end_ts: Optional[float] = None
    status: Optional[str] = None

    @property
    def queue_wait(self) -> Optional[float]:
        if self.start_ts is None:
            return None
        return self.start_ts - self.arrival_ts

    @property
    def service(self) -> Optional[float]:
        if self.start_ts is None or self.end_ts is None:
            return None
        return self.end_ts - self.start_ts

    @property
    def response(self) -> Optional[float]:
        if self.end_ts is None:
            return None
        return self.end_ts - self.arrival_ts

    def to_row(self) -> dict:
        return {
            "request_id": self.request_id,
            "stream_id": self.stream_id,
            "arrival": self.arrival_ts,
            "start": self.start_ts,
            "end": self.end_ts,
            "status": self.status,
            "queue_wait": self.queue_wait,
            "service": self.service,
            "response": self.response,
        }


class Scheduler:
    """Queue + in-flight bookkeeping shared by all gateway modes.

    ``on_start(record, now, in_flight_count)`` is invoked the moment a
    request is admitted to the backend; the driver decides what "service"
    means (simulated duration or a real HTTP call).
    """

    def __init__(self, concurrency_cap: int, timeout: float,
                 on_start: Optional[Callable[[BenchRequestRecord, float, int], None]] = None):
        if concurrency_cap < 1:
            raise ValueError("concurrency_cap must be >= 1")
        if timeout <= 0:
            raise ValueError("timeout must be > 0")
        self.cap = concurrency_cap
        self.timeout = timeout
        self.on_start = on_start
        self.records: list[BenchRequestRecord] = []
        self.queue: deque[int] = deque()
        self.in_flight: set[int] = set()
        self.live_queued = 0
        self.accepting = True
        self.event_log: list[tuple[float, str, int, int, int]] = []
        self.in_flight_series: list[tuple[float, int]] = []

    # -- bookkeeping helpers -------------------------------------------------

    def _log(self, now: float, kind: str, rid: int) -> None:
        self.event_log.append((now, kind, rid, len(self.in_flight), self.live_queued))
        if not self.in_flight_series or self.in_flight_series[-1][1] != len(self.in_flight):
            self.in_flight_series.append((now, len(self.in_flight)))

    def _start(self, rid: int, now: float) -> None:
        record = self.records[rid]
        record.start_ts = now
        self.in_flight.add(rid)
        self._log(now, "start", rid)
        if self.on_start is not None:
            self.on_start(record, now, len(self.in_flight))

    def _fill(self, now: float) -> None:
        while self.queue and len(self.in_flight) < self.cap:
            rid = self.queue.popleft()
            if self.records[rid].status is not None:  # dropped while queued
                continue
            self.live_queued -= 1
            self._start(rid, now)

    # -- driver-facing transitions -------------------------------------------

    def submit(self, stream_id: int, now: float) -> int:
        """Admit a new request: start immediately if a slot is free, else
        append to the FIFO queue.  Returns the request id."""
        if not self.accepting:
            raise Shutdown("gateway is shutting down")
        rid = len(self.records)
        self.records.append(BenchRequestRecord(request_id=rid, stream_id=stream_id,
                                               arrival_ts=now))
        self._log(now, "arrival", rid)
        if len(self.in_flight) < self.cap:
            self._start(rid, now)
        else:
            self.queue.append(rid)
            self.live_queued += 1
            self._log(now, "enqueue", rid)
        return rid

    def complete(self, rid: int, now: float) -> bool:
        """Mark a request finished; frees the slot and starts the next queued
        request.  Returns False if the request was already dropped."""
        record = self.records[rid]
        if record.status is not None or rid not in self.in_flight:
            return False
        record.end_ts = now
        record.status = RequestStatus.COMPLETED.value
        self.in_flight.discard(rid)
        self._log(now, "complete", rid)
        self._fill(now)
        return True

    def expire(self, rid: int, now: float) -> bool:
        """Apply a deadline expiry for one request (driver guarantees the
        request's age has reached the timeout).  No-op if already settled."""
        record = self.records[rid]
        if record.status is not None:
            return False
        if rid in self.in_flight:
            record.status = RequestStatus.TIMED_OUT_IN_SERVICE.value
            self.in_flight.discard(rid)
            self._log(now, "drop_service", rid)
            self._fill(now)
            return True
        record.status = RequestStatus.TIMED_OUT_IN_QUEUE.value
        self.live_queued -= 1
        self._log(now, "drop_queue", rid)
        return True

    def enforce_timeout(self, now: float) -> list[int]:
        """Drop every request whose total age strictly exceeds the timeout.

        The sweep settles all overdue requests with the status matching
        where they are *now* (queue vs in service) before any freed slot is
        refilled, so a stale queued request is never promoted just to be
        dropped.
        """
        dropped = []
        for record in self.records:
            if record.status is not None or now - record.arrival_ts <= self.timeout:
                continue
            rid = record.request_id
            if rid in self.in_flight:
                record.status = RequestStatus.TIMED_OUT_IN_SERVICE.value
                self.in_flight.discard(rid)
                self._log(now, "drop_service", rid)
            else:
                record.status = RequestStatus.TIMED_OUT_IN_QUEUE.value
                self.live_queued -= 1
                self._log(now, "drop_queue", rid)
            dropped.append(rid)
        if dropped:
            self._fill(now)
        return dropped

    def pending(self) -> list[int]:
        return [r.request_id for r in self.records if r.status is None]
