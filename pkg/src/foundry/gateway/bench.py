"""Benchmark runners: sequential per-image latency and continuous
frame-stream replay under a concurrency sweep.

Virtual-time mode drives the scheduler through a deterministic event heap so
a full sweep finishes in seconds; wall-clock mode drives the same scheduler
with threads against a real HTTP backend.
"""

from __future__ import annotations

import csv
import heapq
import json
import math
import queue as queue_mod
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .backends import BackendModel, BackendUnreachable, HttpBackend, simulated_service
from .scheduler import BenchRequestRecord, RequestStatus, Scheduler


@dataclass(frozen=True)
class GatewayConfig:
    concurrency_cap: int = 1
    timeout: float = 10.0


@dataclass
class BenchReport:
    mode: str
    config: dict
    records: list[BenchRequestRecord]
    aggregates: dict
    in_flight_series: list[tuple[float, int]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "config": self.config,
            "aggregates": self.aggregates,
            "in_flight_series": [[t, n] for t, n in self.in_flight_series],
            "records": [r.to_row() for r in self.records],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


# ---------------------------------------------------------------------------
# Aggregation


def _nearest_rank(sorted_values: Sequence[float], pct: float) -> float:
    rank = max(1, math.ceil(pct / 100.0 * len(sorted_values)))
    return sorted_values[rank - 1]


def _series_stats(values: list[float]) -> dict:
    if not values:
        return {"n": 0, "mean": None, "median": None, "std": None,
                "p50": None, "p90": None, "p99": None}
    ordered = sorted(values)
    n = len(values)
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / n
    mid = n // 2
    median = ordered[mid] if n % 2 == 1 else (ordered[mid - 1] + ordered[mid]) / 2.0
    return {
        "n": n,
        "mean": mean,
        "median": median,
        "std": math.sqrt(var),
        "p50": _nearest_rank(ordered, 50),
        "p90": _nearest_rank(ordered, 90),
        "p99": _nearest_rank(ordered, 99),
    }


def aggregate(records: Sequence[BenchRequestRecord]) -> dict:
    """Recomputable aggregates over the raw request records.

    ``response`` (end - arrival) and ``service`` (end - start) cover
    completed requests only; ``queue_wait`` covers every request that
    started. Percentiles are nearest-rank.
    """
    completed = [r for r in records if r.status == RequestStatus.COMPLETED.value]
    started = [r for r in records if r.start_ts is not None]
    drops = {
        RequestStatus.TIMED_OUT_IN_QUEUE.value: 0,
        RequestStatus.TIMED_OUT_IN_SERVICE.value: 0,
    }
    pending = 0
    for r in records:
        if r.status in drops:
            drops[r.status] += 1
        elif r.status is None:
            pending += 1
    return {
        "emitted": len(records),
        "completed": len(completed),
        "drops": drops,
        "pending": pending,
        "response": _series_stats([r.response for r in completed]),
        "service": _series_stats([r.service for r in completed]),
        "queue_wait": _series_stats([r.queue_wait for r in started]),
    }


# ---------------------------------------------------------------------------
# Virtual-time continuous driver

_COMPLETE, _TIMEOUT, _ARRIVAL = 0, 1, 2


class _VirtualGateway:
    """Discrete-event driver: a heap of (time, kind, seq) events over the
    shared Scheduler.  Completions sort before deadline expiries at equal
    timestamps, implementing the strict timeout boundary."""

    def __init__(self, cfg: GatewayConfig, model: BackendModel):
        self.model = model
        self.heap: list[tuple[float, int, int, int, int]] = []
        self.seq = 0
        self.scheduler = Scheduler(cfg.concurrency_cap, cfg.timeout, on_start=self._on_start)

    def _push(self, t: float, kind: int, rid: int, stream_id: int = -1) -> None:
        self.seq += 1
        heapq.heappush(self.heap, (t, kind, self.seq, rid, stream_id))

    def _on_start(self, record: BenchRequestRecord, now: float, in_flight: int) -> None:
        duration = simulated_service(self.model, in_flight, record.request_id)
        self._push(now + duration, _COMPLETE, record.request_id)

    def add_arrival(self, t: float, stream_id: int) -> None:
        self._push(t, _ARRIVAL, -1, stream_id)

    def run(self) -> None:
        sched = self.scheduler
        while self.heap:
            t, kind, _, rid, stream_id = heapq.heappop(self.heap)
            if kind == _ARRIVAL:
                new_rid = sched.submit(stream_id, t)
                if math.isfinite(sched.timeout):
                    self._push(t + sched.timeout, _TIMEOUT, new_rid)
            elif kind == _COMPLETE:
                sched.complete(rid, t)
            else:
                sched.expire(rid, t)


def run_continuous_bench(streams: int, frame_rate: float, duration: float,
                         cfg: GatewayConfig, model: BackendModel) -> BenchReport:
    """Replay ``streams`` synthetic video streams at ``frame_rate`` Hz for
    ``duration`` seconds of virtual time; one request per frame.

    Streams are phase-staggered by 1/(streams * frame_rate) so arrivals
    interleave deterministically.
    """
    if frame_rate <= 0:
        raise ValueError("frame_rate must be > 0")
    gw = _VirtualGateway(cfg, model)
    for stream in range(streams):
        offset = stream / (streams * frame_rate)
        frame = 0
        while frame / frame_rate + offset < duration:
            gw.add_arrival(frame / frame_rate + offset, stream)
            frame += 1
    gw.run()
    sched = gw.scheduler
    return BenchReport(
        mode="continuous-virtual",
        config={"streams": streams, "frame_rate": frame_rate, "duration": duration,
                "concurrency_cap": cfg.concurrency_cap, "timeout": cfg.timeout,
                "backend": {"s0": model.base_service_time, "gamma": model.capacity_exponent,
                            "batch_capacity": model.batch_capacity, "jitter": model.jitter,
                            "seed": model.seed}},
        records=sched.records,
        aggregates=aggregate(sched.records),
        in_flight_series=sched.in_flight_series,
    )


def run_continuous_sweep(ks: Sequence[int], streams: int, frame_rate: float,
                         duration: float, timeout: float,
                         model: BackendModel) -> dict[int, BenchReport]:
    return {
        k: run_continuous_bench(streams, frame_rate, duration,
                                GatewayConfig(concurrency_cap=k, timeout=timeout), model)
        for k in ks
    }


# ---------------------------------------------------------------------------
# Sequential benchmarking


def run_sequential_bench(n_requests: int, model: Optional[BackendModel] = None,
                         backend: Optional[HttpBackend] = None, prompt: str = "",
                         image_paths: Optional[Sequence[str]] = None) -> BenchReport:
    """Strictly one request at a time; per-request latency recorded.

    With a simulated model this runs in virtual time.  With an HTTP backend
    each image is posted and timed on the wall clock.
    """
    records: list[BenchRequestRecord] = []
    if backend is not None:
        paths = list(image_paths or [None] * n_requests)
        for i in range(n_requests):
            arrival = time.monotonic()
            backend.infer(prompt, paths[i] if i < len(paths) else None)
            end = time.monotonic()
            records.append(BenchRequestRecord(
                request_id=i, stream_id=0, arrival_ts=arrival, start_ts=arrival,
                end_ts=end, status=RequestStatus.COMPLETED.value))
        mode = "sequential-http"
        config = {"endpoint": backend.endpoint, "n": n_requests}
    else:
        model = model or BackendModel()
        now = 0.0
        for i in range(n_requests):
            duration = simulated_service(model, 1, i)
            records.append(BenchRequestRecord(
                request_id=i, stream_id=0, arrival_ts=now, start_ts=now,
                end_ts=now + duration, status=RequestStatus.COMPLETED.value))
            now += duration
        mode = "sequential-virtual"
        config = {"s0": model.base_service_time, "jitter": model.jitter,
                  "seed": model.seed, "n": n_requests}
    return BenchReport(mode=mode, config=config, records=records,
                       aggregates=aggregate(records))


# ---------------------------------------------------------------------------
# Wall-clock continuous driver (real HTTP backends)


def run_continuous_bench_realtime(streams: int, frame_rate: float, duration: float,
                                  cfg: GatewayConfig, backend: HttpBackend,
                                  prompt: str = "",
                                  tick: float = 0.05) -> BenchReport:
    """Same scheduling contract as the virtual driver, on the wall clock.

    Stream replayers and HTTP completions post messages to a single loop
    thread that owns the scheduler; a periodic tick enforces timeouts.
    """
    messages: queue_mod.Queue = queue_mod.Queue()
    origin = time.monotonic()

    def now() -> float:
        return time.monotonic() - origin

    workers: list[threading.Thread] = []

    def on_start(record: BenchRequestRecord, _now: float, _b: int) -> None:
        def work() -> None:
            try:
                backend.infer(prompt)
            except BackendUnreachable:
                pass  # completion timestamp still recorded; drops come from timeouts
            messages.put(("complete", record.request_id))
        worker = threading.Thread(target=work, daemon=True)
        workers.append(worker)
        worker.start()

    sched = Scheduler(cfg.concurrency_cap, cfg.timeout, on_start=on_start)

    def replay(stream_id: int) -> None:
        period = 1.0 / frame_rate
        offset = stream_id / (streams * frame_rate)
        frame = 0
        while True:
            t = frame * period + offset
            if t >= duration:
                return
            delay = t - now()
            if delay > 0:
                time.sleep(delay)
            messages.put(("arrival", stream_id))
            frame += 1

    replayers = [threading.Thread(target=replay, args=(s,), daemon=True)
                 for s in range(streams)]
    for r in replayers:
        r.start()

    deadline = duration + cfg.timeout + 1.0
    while now() < deadline:
        try:
            kind, payload = messages.get(timeout=tick)
        except queue_mod.Empty:
            sched.enforce_timeout(now())
            if now() > duration and not sched.pending():
                break
            continue
        if kind == "arrival":
            sched.submit(payload, now())
        else:
            sched.complete(payload, now())
        sched.enforce_timeout(now())
        if now() > duration and not sched.pending():
            break
    sched.enforce_timeout(deadline + cfg.timeout)  # settle stragglers
    return BenchReport(
        mode="continuous-realtime",
        config={"streams": streams, "frame_rate": frame_rate, "duration": duration,
                "concurrency_cap": cfg.concurrency_cap, "timeout": cfg.timeout,
                "endpoint": backend.endpoint},
        records=sched.records,
        aggregates=aggregate(sched.records),
        in_flight_series=sched.in_flight_series,
    )


# ---------------------------------------------------------------------------
# Exports

_CSV_COLUMNS = ["request_id", "stream_id", "arrival", "start", "end", "status",
                "queue_wait", "service", "response"]


def write_bench_csv(report: BenchReport, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_CSV_COLUMNS)
        writer.writeheader()
        for record in report.records:
            writer.writerow(record.to_row())
    return path


def write_sweep_summary(reports: dict[int, BenchReport], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    summary = {
        str(k): {"config": r.config, "aggregates": r.aggregates}
        for k, r in sorted(reports.items())
    }
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return path
