from __future__ import annotations

import json
import math
import random
import threading
import time
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from foundry.gateway import (
    BackendModel,
    BackendUnreachable,
    GatewayConfig,
    HttpBackend,
    RequestStatus,
    Scheduler,
    aggregate,
    run_continuous_bench,
    run_sequential_bench,
    simulated_service,
    write_bench_csv,
    write_sweep_summary,
)
from foundry.gateway.bench import _VirtualGateway

from oracles import oracle_population_std


# ---------------------------------------------------------------------------
# Scheduler unit behavior


def test_cap_arithmetic_three_simultaneous():
    sched = Scheduler(concurrency_cap=2, timeout=10.0)
    for stream in range(3):
        sched.submit(stream, now=0.0)
    assert len(sched.in_flight) == 2
    assert sched.live_queued == 1


def test_completion_dequeues_head_fifo():
    sched = Scheduler(concurrency_cap=1, timeout=10.0)
    a = sched.submit(0, 0.0)
    b = sched.submit(0, 0.1)
    c = sched.submit(0, 0.2)
    assert sched.records[a].start_ts == 0.0
    sched.complete(a, 1.0)
    assert sched.records[b].start_ts == 1.0
    assert sched.records[c].start_ts is None
    sched.complete(b, 2.0)
    assert sched.records[c].start_ts == 2.0


def test_start_order_equals_arrival_order():
    sched = Scheduler(concurrency_cap=2, timeout=100.0)
    ids = [sched.submit(0, 0.1 * i) for i in range(6)]
    finished = 0
    now = 1.0
    while any(sched.records[r].status is None for r in ids):
        running = sorted(sched.in_flight)
        sched.complete(running[0], now)
        finished += 1
        now += 1.0
    starts = [(sched.records[r].start_ts, r) for r in ids]
    assert [r for _, r in sorted(starts)] == ids


def test_timeout_drops_queued_request():
    sched = Scheduler(concurrency_cap=1, timeout=5.0)
    sched.submit(0, 0.0)
    queued = sched.submit(0, 0.0)
    dropped = sched.enforce_timeout(now=5.1)
    assert queued in dropped
    record = sched.records[queued]
    assert record.status == RequestStatus.TIMED_OUT_IN_QUEUE.value
    assert record.start_ts is None


def test_timeout_drops_in_flight_and_frees_slot():
    sched = Scheduler(concurrency_cap=1, timeout=5.0)
    first = sched.submit(0, 0.0)
    second = sched.submit(0, 3.0)
    dropped = sched.enforce_timeout(now=5.5)
    assert dropped == [first]
    assert sched.records[first].status == RequestStatus.TIMED_OUT_IN_SERVICE.value
    assert sched.records[first].start_ts is not None
    assert sched.records[first].end_ts is None
    assert sched.records[second].start_ts == 5.5  # freed slot filled immediately


def test_timeout_boundary_is_strict():
    sched = Scheduler(concurrency_cap=1, timeout=5.0)
    rid = sched.submit(0, 0.0)
    assert sched.enforce_timeout(now=5.0) == []  # age == timeout: not dropped
    assert sched.complete(rid, 5.0)
    assert sched.records[rid].status == RequestStatus.COMPLETED.value


def test_virtual_driver_completion_beats_deadline_at_same_instant():
    model = BackendModel(base_service_time=5.0, capacity_exponent=1.0, jitter=0.0)
    gw = _VirtualGateway(GatewayConfig(concurrency_cap=1, timeout=5.0), model)
    gw.add_arrival(0.0, 0)
    gw.run()
    record = gw.scheduler.records[0]
    assert record.status == RequestStatus.COMPLETED.value
    assert record.end_ts == 5.0


# ---------------------------------------------------------------------------
# Simulated service model


def test_isolated_request_takes_base_time():
    model = BackendModel(base_service_time=0.59, jitter=0.0)
    assert simulated_service(model, 1) == 0.59


def test_gamma_one_is_batch_size_independent():
    model = BackendModel(base_service_time=0.5, capacity_exponent=1.0, jitter=0.0)
    assert simulated_service(model, 1) == simulated_service(model, 30) == 0.5


def test_gamma_zero_is_linear_in_batch():
    model = BackendModel(base_service_time=0.5, capacity_exponent=0.0, jitter=0.0)
    assert simulated_service(model, 4) == pytest.approx(2.0)


def test_batch_capacity_knee_default_reduces_to_power_law():
    model = BackendModel(base_service_time=1.0, capacity_exponent=0.3, jitter=0.0)
    assert simulated_service(model, 8) == pytest.approx(8 ** 0.7)


def test_jitter_deterministic_per_request_seq():
    model = BackendModel(base_service_time=1.0, jitter=0.3, seed=5)
    first = simulated_service(model, 1, request_seq=10)
    again = simulated_service(model, 1, request_seq=10)
    other = simulated_service(model, 1, request_seq=11)
    assert first == again
    assert first != other


# ---------------------------------------------------------------------------
# Aggregation


def _completed(rid, arrival, start, end):
    from foundry.gateway import BenchRequestRecord
    return BenchRequestRecord(request_id=rid, stream_id=0, arrival_ts=arrival,
                              start_ts=start, end_ts=end,
                              status=RequestStatus.COMPLETED.value)


def test_aggregate_hand_case():
    records = [_completed(i, 0.0, 0.0, r) for i, r in enumerate([0.5, 0.6, 0.7])]
    stats = aggregate(records)["response"]
    assert stats["mean"] == pytest.approx(0.6, abs=1e-12)
    assert stats["median"] == pytest.approx(0.6, abs=1e-12)
    assert stats["std"] == pytest.approx(oracle_population_std([0.5, 0.6, 0.7]), abs=1e-12)
    assert stats["std"] == pytest.approx(0.0816, abs=5e-5)
    assert stats["p50"] == 0.6
    assert stats["p99"] == 0.7


def test_aggregate_empty_completed_set():
    from foundry.gateway import BenchRequestRecord
    dropped = BenchRequestRecord(request_id=0, stream_id=0, arrival_ts=0.0,
                                 status=RequestStatus.TIMED_OUT_IN_QUEUE.value)
    stats = aggregate([dropped])
    assert stats["response"]["mean"] is None
    assert stats["drops"][RequestStatus.TIMED_OUT_IN_QUEUE.value] == 1
    assert stats["completed"] == 0


def test_aggregate_single_request_durations():
    record = _completed(0, 0.0, 0.1, 0.6)
    stats = aggregate([record])
    assert stats["queue_wait"]["mean"] == pytest.approx(0.1)
    assert stats["response"]["mean"] == pytest.approx(0.6)
    assert stats["service"]["mean"] == pytest.approx(0.5)


def test_aggregate_order_invariant():
    records = [_completed(i, 0.0, 0.0, 0.4 + 0.1 * i) for i in range(5)]
    assert aggregate(records) == aggregate(list(reversed(records)))


# ---------------------------------------------------------------------------
# Sequential bench


def test_sequential_zero_jitter_calibration():
    report = run_sequential_bench(111, model=BackendModel(base_service_time=0.59, jitter=0.0))
    stats = report.aggregates["response"]
    assert stats["mean"] == pytest.approx(0.59, abs=1e-12)
    assert stats["median"] == pytest.approx(0.59, abs=1e-12)
    assert stats["std"] == pytest.approx(0.0, abs=1e-9)
    assert report.aggregates["completed"] == 111


def test_sequential_zero_images_is_empty_report():
    report = run_sequential_bench(0, model=BackendModel())
    assert report.aggregates["emitted"] == 0
    assert report.aggregates["response"]["mean"] is None


def test_sequential_http_unreachable():
    backend = HttpBackend("http://127.0.0.1:1/infer", timeout=0.2)
    with pytest.raises(BackendUnreachable):
        run_sequential_bench(1, backend=backend)


# ---------------------------------------------------------------------------
# Continuous bench


def test_arrival_arithmetic_1200_requests():
    model = BackendModel(base_service_time=0.01, capacity_exponent=1.0, jitter=0.0)
    report = run_continuous_bench(4, 30.0, 10.0, GatewayConfig(concurrency_cap=4), model)
    assert report.aggregates["emitted"] == 1200


def test_saturated_k1_drops_dominate():
    model = BackendModel(base_service_time=0.55, capacity_exponent=0.0,
                         batch_capacity=4.0, jitter=0.0, seed=7)
    report = run_continuous_bench(4, 30.0, 20.0, GatewayConfig(concurrency_cap=1, timeout=10.0),
                                  model)
    drops = sum(report.aggregates["drops"].values())
    assert drops > 0
    assert drops > report.aggregates["completed"]


def test_conservation():
    model = BackendModel(base_service_time=0.3, capacity_exponent=0.5, jitter=0.2, seed=3)
    report = run_continuous_bench(2, 15.0, 8.0, GatewayConfig(concurrency_cap=3, timeout=2.0),
                                  model)
    agg = report.aggregates
    assert agg["emitted"] == (agg["completed"] + agg["pending"]
                              + sum(agg["drops"].values()))
    assert agg["pending"] == 0  # virtual runs settle every request


def test_report_aggregates_recomputable_from_records():
    model = BackendModel(base_service_time=0.3, capacity_exponent=0.4, jitter=0.1, seed=2)
    report = run_continuous_bench(2, 10.0, 5.0, GatewayConfig(concurrency_cap=3, timeout=2.0),
                                  model)
    assert aggregate(report.records) == report.aggregates


def test_deterministic_replay_byte_identical():
    model = BackendModel(base_service_time=0.4, capacity_exponent=0.6, jitter=0.25, seed=99)
    cfg = GatewayConfig(concurrency_cap=5, timeout=3.0)
    first = run_continuous_bench(3, 10.0, 6.0, cfg, model)
    second = run_continuous_bench(3, 10.0, 6.0, cfg, model)
    assert first.to_json().encode() == second.to_json().encode()


def test_exports(tmp_path):
    model = BackendModel(base_service_time=0.2, jitter=0.0)
    report = run_continuous_bench(1, 5.0, 2.0, GatewayConfig(concurrency_cap=2), model)
    csv_path = write_bench_csv(report, tmp_path / "bench_2.csv")
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "request_id,stream_id,arrival,start,end,status,queue_wait,service,response"
    assert len(lines) == 1 + report.aggregates["emitted"]
    summary_path = write_sweep_summary({2: report}, tmp_path / "sweep_summary.json")
    summary = json.loads(summary_path.read_text())
    assert summary["2"]["aggregates"]["emitted"] == report.aggregates["emitted"]


# ---------------------------------------------------------------------------
# Randomized invariant harness (shared with the acceptance suite)


def run_random_schedule(seed: int, n_requests: int, cap: int, timeout: float):
    """Drive the virtual gateway through a randomized arrival schedule and
    jittered service model; returns the scheduler after quiescence."""
    rng = random.Random(seed)
    model = BackendModel(base_service_time=rng.uniform(0.05, 0.4),
                         capacity_exponent=rng.uniform(0.0, 1.0),
                         jitter=rng.uniform(0.0, 0.5), seed=seed)
    gw = _VirtualGateway(GatewayConfig(concurrency_cap=cap, timeout=timeout), model)
    t = 0.0
    for i in range(n_requests):
        t += rng.expovariate(25.0)
        gw.add_arrival(t, stream_id=i % 4)
    gw.run()
    return gw.scheduler


def check_invariants(sched: Scheduler, cap: int) -> int:
    """Replays the event log; returns the number of events checked."""
    assert max(entry[3] for entry in sched.event_log) <= cap
    start_order = [entry[2] for entry in sched.event_log if entry[1] == "start"]
    assert start_order == sorted(start_order), "FIFO start order violated"
    statuses = [r.status for r in sched.records]
    emitted = len(sched.records)
    completed = statuses.count(RequestStatus.COMPLETED.value)
    queue_drops = statuses.count(RequestStatus.TIMED_OUT_IN_QUEUE.value)
    service_drops = statuses.count(RequestStatus.TIMED_OUT_IN_SERVICE.value)
    pending = statuses.count(None)
    assert emitted == completed + queue_drops + service_drops + pending
    for record in sched.records:
        if record.start_ts is not None:
            assert record.arrival_ts <= record.start_ts + 1e-12
        if record.end_ts is not None:
            assert record.start_ts <= record.end_ts + 1e-12
        if record.status == RequestStatus.TIMED_OUT_IN_QUEUE.value:
            assert record.start_ts is None
    times = [entry[0] for entry in sched.event_log]
    assert times == sorted(times)
    return len(sched.event_log)


@pytest.mark.parametrize("seed,cap,timeout", [(1, 1, 0.5), (2, 3, 1.0), (3, 8, 2.0),
                                              (4, 30, 0.2), (5, 2, math.inf)])
def test_randomized_schedules_hold_invariants(seed, cap, timeout):
    if math.isinf(timeout):
        sched = run_random_schedule(seed, 800, cap, timeout=10 ** 9)
    else:
        sched = run_random_schedule(seed, 800, cap, timeout)
    check_invariants(sched, cap)


# ---------------------------------------------------------------------------
# Wall-clock driver against a stub HTTP backend


class _StubHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        self.rfile.read(length)
        time.sleep(0.02)
        body = json.dumps({"text": "ok"}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}/infer"
    server.shutdown()


def test_realtime_driver_against_stub(stub_server):
    from foundry.gateway import run_continuous_bench_realtime
    report = run_continuous_bench_realtime(
        streams=2, frame_rate=10.0, duration=0.5,
        cfg=GatewayConfig(concurrency_cap=2, timeout=2.0),
        backend=HttpBackend(stub_server, timeout=2.0))
    agg = report.aggregates
    assert agg["emitted"] == 10
    assert agg["completed"] > 0
    assert agg["emitted"] == agg["completed"] + agg["pending"] + sum(agg["drops"].values())


def test_sequential_http_against_stub(stub_server):
    report = run_sequential_bench(3, backend=HttpBackend(stub_server, timeout=2.0))
    assert report.aggregates["completed"] == 3
    assert report.aggregates["response"]["mean"] >= 0.02
