"""Serving harness: sequential benchmarking and continuous FIFO scheduling."""

from .backends import BackendModel, BackendUnreachable, HttpBackend, simulated_service
from .bench import (
    BenchReport,
    GatewayConfig,
    aggregate,
    run_continuous_bench,
    run_continuous_bench_realtime,
    run_continuous_sweep,
    run_sequential_bench,
    write_bench_csv,
    write_sweep_summary,
)
from .scheduler import BenchRequestRecord, RequestStatus, Scheduler, Shutdown

__all__ = [
    "BackendModel", "BackendUnreachable", "HttpBackend", "simulated_service",
    "BenchReport", "GatewayConfig", "aggregate", "run_continuous_bench",
    "run_continuous_bench_realtime", "run_continuous_sweep", "run_sequential_bench",
    "write_bench_csv", "write_sweep_summary",
    "BenchRequestRecord", "RequestStatus", "Scheduler", "Shutdown",
]
