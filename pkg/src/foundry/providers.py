"""Vision-language provider clients: HTTP chat-completion endpoints and a
deterministic simulated provider for offline runs.

The simulator partitions its RNG per request id, so outputs depend only on
(script seed, request id, provider name) -- never on call order or
concurrency.  Structured outputs are selected by the prompt's
``response_schema_hint``, a JSON object with a ``kind`` key.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import requests


class ProviderError(Exception):
    """Base class for provider failures."""


class CredentialMissing(ProviderError):
    pass


class TransientTransportError(ProviderError):
    """Retryable transport-level failure (connection refused, 429, 5xx)."""


class TransportExhausted(ProviderError):
    """Raised after the retry budget is spent on transient failures."""


class MalformedResponse(ProviderError):
    pass


class EmptyPool(ProviderError):
    pass


@dataclass(frozen=True)
class VisionPrompt:
    system_text: str
    user_text: str
    image_path: Optional[str] = None
    temperature: float = 0.7
    max_output_tokens: int = 1024
    response_schema_hint: Optional[str] = None
    request_id: str = ""

    def __post_init__(self) -> None:
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be >= 1")


@dataclass(frozen=True)
class ProviderResponse:
    text: str
    model: str
    latency: float
    token_usage: Optional[tuple[int, int]] = None


@dataclass(frozen=True)
class RetryPolicy:
    max_retries: int = 2
    base_backoff: float = 0.5
    backoff_multiplier: float = 2.0
    retryable: tuple[type, ...] = (TransientTransportError,)

    def backoff(self, attempt: int) -> float:
        return self.base_backoff * (self.backoff_multiplier ** attempt)


def rotate_provider(pool: Sequence[str], stage, index: int) -> str:
    """Deterministic round-robin over the provider pool.

    The caption and question agents feed a per-image index; the answer agent
    bypasses rotation and uses the first two pool members directly.
    """
    if not pool:
        raise EmptyPool("provider pool is empty")
    return pool[index % len(pool)]


def complete_vision(provider: "ProviderClient", prompt: VisionPrompt,
                    policy: RetryPolicy = RetryPolicy()) -> ProviderResponse:
    """Call a provider, retrying transient transport failures per policy."""
    last: Optional[Exception] = None
    for attempt in range(policy.max_retries + 1):
        try:
            return provider.complete(prompt)
        except policy.retryable as exc:  # type: ignore[misc]
            last = exc
            if attempt < policy.max_retries and policy.base_backoff > 0:
                time.sleep(policy.backoff(attempt))
    raise TransportExhausted(
        f"{provider.name}: {policy.max_retries + 1} attempts failed: {last}") from last


class ProviderClient:
    """Minimal provider interface; instances are shareable across tasks."""

    name: str

    def complete(self, prompt: VisionPrompt) -> ProviderResponse:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# Simulated provider


@dataclass(frozen=True)
class StageBehavior:
    validation_pass_probability: float = 1.0
    response_templates: tuple[str, ...] = ()
    inconsistency_rate: float = 0.0
    latency_mean: float = 0.02
    latency_std: float = 0.0

    def __post_init__(self) -> None:
        for p in (self.validation_pass_probability, self.inconsistency_rate):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {p} outside [0, 1]")


@dataclass(frozen=True)
class SimulatedProviderScript:
    seed: int = 0
    stage_behaviors: Mapping[str, StageBehavior] = field(default_factory=dict)
    # request-id substring -> canned responses, consumed in order; once the
    # tuple is exhausted matching calls fall back to the default behavior.
    overrides: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    fail_first: int = 0

    def behavior(self, stage: str) -> StageBehavior:
        return self.stage_behaviors.get(stage, StageBehavior())


_SCENES = ("urban intersection", "suburban arterial", "highway on-ramp",
           "residential street", "campus ring road")

_CAPTION_TEMPLATES = (
    "A rain-soaked {scene} seen through a streaked windshield, with glare and spray "
    "hiding lane markings and the vehicles ahead.",
    "Low evening sun floods the {scene}, washing out traffic signals and making "
    "pedestrians near the crossing difficult to distinguish.",
    "Dense fog hangs over the {scene}, hiding the road edge and delaying perception "
    "of oncoming headlights and overhead signage.",
    "Heavy snowfall blankets the {scene}, where faded markings and a half-buried "
    "service vehicle challenge reliable object detection.",
)

_OBJECTS = ("vehicle", "pedestrian", "traffic cone", "cyclist", "delivery truck")
_OBJECT_PLURALS = {"vehicle": "vehicles", "pedestrian": "pedestrians",
                   "traffic cone": "traffic cones", "cyclist": "cyclists",
                   "delivery truck": "delivery trucks"}

_CLOSED_QUESTIONS = {
    "uncertainty": "What is the uncertainty level of the {obj} in this scene?",
    "existence": "Does an object of class {obj} exist in the image?",
    "type": "What is the type of {obj} at the bottom left?",
    "counting": "How many {plural} are there?",
    "key_object": "Is this {obj} a key object?",
}

_OPEN_QUESTIONS = {
    "risk_identification": "What perception-related SOTIF risks are evident in this image?",
    "risk_explanation": "What specific factor in the image degrades the perception "
                        "ability of an automated driving system, and why?",
    "recommended_action": "What action should reduce the perception-related risk "
                          "visible in this scene?",
}

_OPEN_ANSWERS = (
    "Reduced contrast and reflections obscure road users, so detection confidence "
    "drops and tracking may lose the {obj} near the lane edge.",
    "Glare saturates the camera around the {obj}, degrading classification and "
    "delaying hazard recognition for the driving system.",
    "Slowing down and increasing following distance compensates for the degraded "
    "visibility around the {obj}.",
)


def _rng_for(*parts) -> random.Random:
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


class SimulatedProvider(ProviderClient):
    """Offline stand-in for a vision LLM endpoint.

    Deterministic: the response for a given request id is a pure function of
    the script seed, the provider name, and the prompt's schema hint.
    """

    def __init__(self, name: str, script: SimulatedProviderScript = SimulatedProviderScript()):
        self.name = name
        self.script = script
        self.calls = 0
        self.call_log: list[dict] = []
        self._lock = threading.Lock()
        self._override_use: dict[str, int] = {}

    def complete(self, prompt: VisionPrompt) -> ProviderResponse:
        with self._lock:
            self.calls += 1
            call_no = self.calls
            self.call_log.append({
                "request_id": prompt.request_id,
                "temperature": prompt.temperature,
                "max_output_tokens": prompt.max_output_tokens,
                "system_text": prompt.system_text,
                "user_text": prompt.user_text,
            })
            if call_no <= self.script.fail_first:
                raise TransientTransportError(f"{self.name}: scripted transport fault")
            override = self._pop_override(prompt.request_id)
        hint = self._hint(prompt)
        stage = hint.get("stage", hint.get("kind", "caption"))
        behavior = self.script.behavior(stage)
        rng = _rng_for(self.script.seed, self.name, prompt.request_id)
        latency = max(0.0, rng.gauss(behavior.latency_mean, behavior.latency_std))
        text = override if override is not None else self._render(hint, prompt, rng)
        return ProviderResponse(text=text, model=self.name, latency=latency,
                                token_usage=(len(prompt.user_text.split()), len(text.split())))

    def _pop_override(self, request_id: str) -> Optional[str]:
        for key, responses in self.script.overrides.items():
            if key in request_id:
                used = self._override_use.get(key, 0)
                if used < len(responses):
                    self._override_use[key] = used + 1
                    return responses[used]
        return None

    @staticmethod
    def _hint(prompt: VisionPrompt) -> dict:
        if not prompt.response_schema_hint:
            return {"kind": "caption"}
        try:
            return json.loads(prompt.response_schema_hint)
        except json.JSONDecodeError:
            return {"kind": "caption"}

    # -- per-kind rendering ------------------------------------------------

    def _render(self, hint: dict, prompt: VisionPrompt, rng: random.Random) -> str:
        kind = hint.get("kind", "caption")
        if kind == "caption":
            return self._caption(hint, rng)
        if kind == "questions":
            return self._questions(hint, rng)
        if kind == "answers":
            return self._answers(hint, rng)
        if kind == "verdict":
            return self._verdict(hint, rng)
        if kind == "judge":
            return json.dumps({"relevance": rng.randint(3, 5),
                               "trustworthiness": rng.randint(3, 5),
                               "clarity": rng.randint(3, 5),
                               "coherence": rng.randint(3, 5)})
        if kind == "probe":
            return self._probe(hint, rng)
        return self._caption(hint, rng)

    def _caption(self, hint: dict, rng: random.Random) -> str:
        behavior = self.script.behavior("caption")
        templates = behavior.response_templates or _CAPTION_TEMPLATES
        scene = _rng_for(self.script.seed, hint.get("image_id", ""), "scene").choice(_SCENES)
        return rng.choice(templates).format(scene=scene, image_id=hint.get("image_id", ""))

    def _questions(self, hint: dict, rng: random.Random) -> str:
        items = []
        for i, closed_type in enumerate(hint.get("closed_types", [])):
            obj = rng.choice(_OBJECTS)
            text = _CLOSED_QUESTIONS[closed_type].format(obj=obj, plural=_OBJECT_PLURALS[obj])
            items.append({
                "question": text,
                "answer_mode": "closed",
                "closed_type": closed_type,
                "difficulty": self._difficulty(rng),
                "expected_answer_type": _expected_type(closed_type),
                "subject": obj,
            })
        for kind in hint.get("open_kinds", []):
            items.append({
                "question": _OPEN_QUESTIONS[kind],
                "answer_mode": "open",
                "closed_type": None,
                "difficulty": self._difficulty(rng),
                "expected_answer_type": _expected_type(kind),
                "subject": rng.choice(_OBJECTS),
            })
        return json.dumps(items)

    @staticmethod
    def _difficulty(rng: random.Random) -> str:
        roll = rng.random()
        if roll < 0.4:
            return "easy"
        if roll < 0.8:
            return "medium"
        return "hard"

    def _truth(self, hint: dict) -> str:
        """Stable per-question ground truth, independent of attempt or trial."""
        rng = _rng_for(self.script.seed, hint.get("image_id", ""),
                       hint.get("question", ""), "truth")
        closed_type = hint.get("closed_type")
        if closed_type in ("existence", "key_object"):
            return rng.choice(("yes", "no"))
        if closed_type == "counting":
            return str(rng.randint(1, 6))
        if closed_type == "uncertainty":
            return rng.choice(("low", "medium", "high"))
        if closed_type == "type":
            return rng.choice(_OBJECTS)
        return ""

    def _answers(self, hint: dict, rng: random.Random) -> str:
        count = int(hint.get("count", 5))
        closed_type = hint.get("closed_type")
        truth = self._truth(hint)
        out = []
        for _ in range(count):
            if closed_type:
                if rng.random() < 0.8:
                    text = truth
                else:
                    text = self._distractor(closed_type, truth, rng)
                answer_type = _ANSWER_TYPE_BY_CLOSED[closed_type]
                confidence = "yes" if text == truth else rng.choice(("maybe", "no"))
            else:
                obj = hint.get("subject") or rng.choice(_OBJECTS)
                text = rng.choice(_OPEN_ANSWERS).format(obj=obj)
                answer_type = hint.get("expected_answer_type", "analysis")
                confidence = rng.choice(("yes", "yes", "maybe"))
            out.append({"answer": text, "confidence": confidence, "answer_type": answer_type})
        return json.dumps(out)

    @staticmethod
    def _distractor(closed_type: str, truth: str, rng: random.Random) -> str:
        if closed_type in ("existence", "key_object"):
            return "no" if truth == "yes" else "yes"
        if closed_type == "counting":
            return str(max(0, int(truth) + rng.choice((-1, 1))))
        if closed_type == "uncertainty":
            return rng.choice([x for x in ("low", "medium", "high") if x != truth])
        return rng.choice([x for x in _OBJECTS if x != truth])

    def _verdict(self, hint: dict, rng: random.Random) -> str:
        behavior = self.script.behavior(hint.get("stage", "caption"))
        passed = rng.random() < behavior.validation_pass_probability
        reason = "consistent with image and risk context" if passed else \
            f"scripted {hint.get('stage', 'caption')} validation failure"
        return json.dumps({"pass": passed, "reason": reason})

    def _probe(self, hint: dict, rng: random.Random) -> str:
        behavior = self.script.behavior(hint.get("stage", "answer"))
        truth = self._truth(hint) or "yes"
        if rng.random() < behavior.inconsistency_rate:
            return self._distractor(hint.get("closed_type") or "existence", truth, rng)
        return truth


_ANSWER_TYPE_BY_CLOSED = {
    "existence": "yes_no",
    "key_object": "yes_no",
    "counting": "count",
    "uncertainty": "multiple_choice",
    "type": "identification",
}


def _expected_type(kind: str) -> str:
    return {
        "counting": "count",
        "existence": "yes_no_multiple_choice",
        "key_object": "yes_no_multiple_choice",
        "uncertainty": "yes_no_multiple_choice",
        "type": "identification",
        "risk_identification": "analysis",
        "risk_explanation": "analysis",
        "recommended_action": "recommendation",
    }[kind]


# ---------------------------------------------------------------------------
# HTTP provider


@dataclass(frozen=True)
class HttpProviderConfig:
    endpoint: str
    model: str
    api_key_env: str
    timeout: float = 60.0


class HttpProvider(ProviderClient):
    """Client for an OpenAI-style chat-completions endpoint.

    Images are transmitted base64-inline as data URLs.  The credential is
    read from the environment at call time, never stored.
    """

    def __init__(self, name: str, config: HttpProviderConfig,
                 session: Optional[requests.Session] = None):
        self.name = name
        self.config = config
        self._session = session or requests.Session()
        self.calls = 0
        self.call_log: list[dict] = []
        self._lock = threading.Lock()

    def complete(self, prompt: VisionPrompt) -> ProviderResponse:
        key = os.environ.get(self.config.api_key_env, "")
        if not key:
            raise CredentialMissing(
                f"{self.name}: environment variable {self.config.api_key_env} is not set")
        content: list[dict] = [{"type": "text", "text": self._user_text(prompt)}]
        if prompt.image_path:
            with open(prompt.image_path, "rb") as fh:
                encoded = base64.b64encode(fh.read()).decode("ascii")
            content.append({"type": "image_url",
                            "image_url": {"url": f"data:image/jpeg;base64,{encoded}"}})
        body = {
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": prompt.system_text},
                {"role": "user", "content": content},
            ],
            "temperature": prompt.temperature,
            "max_tokens": prompt.max_output_tokens,
        }
        with self._lock:
            self.calls += 1
            self.call_log.append({"request_id": prompt.request_id,
                                  "temperature": prompt.temperature,
                                  "max_output_tokens": prompt.max_output_tokens})
        start = time.monotonic()
        try:
            resp = self._session.post(self.config.endpoint, json=body,
                                      headers={"Authorization": f"Bearer {key}"},
                                      timeout=self.config.timeout)
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise TransientTransportError(f"{self.name}: {exc}") from exc
        latency = time.monotonic() - start
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientTransportError(f"{self.name}: HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise ProviderError(f"{self.name}: HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            payload = resp.json()
            text = payload["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"{self.name}: unparsable payload") from exc
        usage = payload.get("usage") or {}
        token_usage = None
        if "prompt_tokens" in usage and "completion_tokens" in usage:
            token_usage = (usage["prompt_tokens"], usage["completion_tokens"])
        return ProviderResponse(text=text, model=self.config.model,
                                latency=latency, token_usage=token_usage)

    @staticmethod
    def _user_text(prompt: VisionPrompt) -> str:
        if prompt.response_schema_hint:
            return (f"{prompt.user_text}\n\n"
                    f"Respond with JSON matching this shape: {prompt.response_schema_hint}")
        return prompt.user_text


class ProviderRegistry:
    """Name -> client lookup shared by agents, the judge, and the CLI."""

    def __init__(self) -> None:
        self._clients: dict[str, ProviderClient] = {}

    def register(self, client: ProviderClient) -> None:
        self._clients[client.name] = client

    def get(self, name: str) -> ProviderClient:
        try:
            return self._clients[name]
        except KeyError:
            raise ProviderError(f"unknown provider {name!r}") from None

    def names(self) -> list[str]:
        return sorted(self._clients)
