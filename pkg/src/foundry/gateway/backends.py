"""Gateway backends: a calibrated contention model for desk-scale runs and a
thin HTTP client for real deployments."""

from __future__ import annotations

import base64
import hashlib
import math
import random
import time
from dataclasses import dataclass
from typing import Optional

import requests


class BackendUnreachable(Exception):
    pass


@dataclass(frozen=True)
class BackendModel:
    """Processor-sharing stand-in for a continuous-batching backend.

    An isolated request takes ``base_service_time``.  A steady batch of ``b``
    in-flight requests is served at rate ``max(1, b/batch_capacity)**gamma``
    relative to a single stream per request, so each request in the batch
    takes ``s0 * max(1, b/batch_capacity)**(1 - gamma)``.

    ``batch_capacity`` is the in-flight count the backend absorbs at base
    speed; with the default 1.0 the model reduces to the plain power law
    ``s0 * b**(1 - gamma)``.  Both knobs are calibration parameters, not
    claims about hardware.
    """
    base_service_time: float = 0.55
    capacity_exponent: float = 0.7
    batch_capacity: float = 1.0
    jitter: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.base_service_time <= 0:
            raise ValueError("base_service_time must be > 0")
        if not 0.0 <= self.capacity_exponent <= 1.0:
            raise ValueError("capacity_exponent must be in [0, 1]")
        if self.batch_capacity < 1.0:
            raise ValueError("batch_capacity must be >= 1")
        if self.jitter < 0:
            raise ValueError("jitter must be >= 0")


def simulated_service(model: BackendModel, in_flight: int, request_seq: int = 0) -> float:
    """Service duration for one request that starts with ``in_flight``
    requests active (itself included) and holds that share for its lifetime.

    Deterministic per (model seed, request_seq): concurrency or processing
    order never changes the draw.
    """
    if in_flight < 1:
        raise ValueError("in_flight must be >= 1")
    load = max(1.0, in_flight / model.batch_capacity)
    duration = model.base_service_time * load ** (1.0 - model.capacity_exponent)
    if model.jitter > 0:
        digest = hashlib.sha256(f"{model.seed}|{request_seq}|service".encode()).digest()
        rng = random.Random(int.from_bytes(digest[:8], "big"))
        sigma = math.sqrt(math.log(1.0 + model.jitter ** 2))
        duration *= math.exp(rng.gauss(-sigma * sigma / 2.0, sigma))
    return duration


class HttpBackend:
    """POSTs {prompt, image(base64)} to an inference endpoint, expects {text}."""

    def __init__(self, endpoint: str, timeout: float = 60.0,
                 session: Optional[requests.Session] = None):
        self.endpoint = endpoint
        self.timeout = timeout
        self._session = session or requests.Session()

    def infer(self, prompt: str, image_path: Optional[str] = None) -> tuple[str, float]:
        body: dict = {"prompt": prompt}
        if image_path:
            with open(image_path, "rb") as fh:
                body["image"] = base64.b64encode(fh.read()).decode("ascii")
        start = time.monotonic()
        try:
            resp = self._session.post(self.endpoint, json=body, timeout=self.timeout)
            resp.raise_for_status()
            text = resp.json()["text"]
        except (requests.RequestException, KeyError, ValueError) as exc:
            raise BackendUnreachable(f"{self.endpoint}: {exc}") from exc
        return text, time.monotonic() - start
