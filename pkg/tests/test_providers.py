from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from foundry.providers import (
    EmptyPool,
    RetryPolicy,
    SimulatedProvider,
    SimulatedProviderScript,
    StageBehavior,
    TransportExhausted,
    VisionPrompt,
    complete_vision,
    rotate_provider,
)
from foundry.records import Stage


def _prompt(request_id: str, hint: dict | None = None) -> VisionPrompt:
    return VisionPrompt(
        system_text="sys", user_text="user", temperature=0.7,
        response_schema_hint=json.dumps(hint or {"kind": "caption", "image_id": "img7"}),
        request_id=request_id)


def test_simulator_deterministic_across_runs():
    script = SimulatedProviderScript(seed=7)
    a = SimulatedProvider("sim", script)
    b = SimulatedProvider("sim", script)
    ids = [f"img{i}/caption/1" for i in range(20)]
    out_a = [a.complete(_prompt(rid)).text for rid in ids]
    out_b = [b.complete(_prompt(rid)).text for rid in ids]
    assert out_a == out_b


def test_simulator_output_independent_of_call_order_and_concurrency():
    script = SimulatedProviderScript(seed=11)
    serial = SimulatedProvider("sim", script)
    threaded = SimulatedProvider("sim", script)
    ids = [f"img{i}/caption/1" for i in range(40)]
    expected = {rid: serial.complete(_prompt(rid)).text for rid in ids}
    with ThreadPoolExecutor(max_workers=8) as pool:
        got = dict(zip(ids, pool.map(lambda r: threaded.complete(_prompt(r)).text, ids)))
    assert got == expected


def test_simulator_latency_is_seeded_not_slept():
    behaviors = {"caption": StageBehavior(latency_mean=5.0, latency_std=1.0)}
    provider = SimulatedProvider("sim", SimulatedProviderScript(seed=3, stage_behaviors=behaviors))
    import time
    start = time.perf_counter()
    response = provider.complete(_prompt("x/caption/1"))
    assert time.perf_counter() - start < 0.5  # latency is synthetic
    assert response.latency > 0


def test_template_passthrough():
    behaviors = {"caption": StageBehavior(
        response_templates=("rainy windshield scene ahead of the ego vehicle",))}
    provider = SimulatedProvider("sim", SimulatedProviderScript(seed=0, stage_behaviors=behaviors))
    response = provider.complete(_prompt("img1/caption/1"))
    assert "rainy windshield scene" in response.text


def test_retry_fail_twice_then_succeed_counts_three_calls():
    provider = SimulatedProvider("sim", SimulatedProviderScript(seed=0, fail_first=2))
    policy = RetryPolicy(max_retries=2, base_backoff=0.0)
    response = complete_vision(provider, _prompt("img1/caption/1"), policy)
    assert response.text
    assert provider.calls == 3


def test_retry_exhaustion():
    provider = SimulatedProvider("sim", SimulatedProviderScript(seed=0, fail_first=10 ** 6))
    policy = RetryPolicy(max_retries=1, base_backoff=0.0)
    with pytest.raises(TransportExhausted):
        complete_vision(provider, _prompt("img1/caption/1"), policy)
    assert provider.calls == 2


def test_backoff_schedule_non_decreasing():
    policy = RetryPolicy(max_retries=5, base_backoff=0.1, backoff_multiplier=2.0)
    delays = [policy.backoff(i) for i in range(5)]
    assert delays == sorted(delays)


def test_overrides_consumed_in_order_then_default():
    overrides = {"probe": ("yes", "no", "no")}
    provider = SimulatedProvider("sim", SimulatedProviderScript(seed=0, overrides=overrides))
    hint = {"kind": "probe", "stage": "answer", "image_id": "i", "question": "q?",
            "closed_type": "existence"}
    texts = [provider.complete(_prompt(f"i/q/probe/{t}", hint)).text for t in (1, 2, 3)]
    assert texts == ["yes", "no", "no"]
    fourth = provider.complete(_prompt("i/q/probe/4", hint)).text
    assert fourth in ("yes", "no")  # default behavior after overrides run out


# ---------------------------------------------------------------------------
# Rotation


def test_rotate_modulo():
    assert rotate_provider(["A", "B"], Stage.CAPTION, 0) == "A"
    assert rotate_provider(["A", "B"], Stage.CAPTION, 3) == "B"


def test_rotate_cycle():
    pool = ["A", "B", "C"]
    assert [rotate_provider(pool, Stage.QUESTION, i) for i in range(6)] == \
        ["A", "B", "C", "A", "B", "C"]


def test_rotate_empty_pool():
    with pytest.raises(EmptyPool):
        rotate_provider([], Stage.CAPTION, 0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.text(min_size=1, max_size=3), min_size=1, max_size=6, unique=True),
       st.integers(min_value=1, max_value=50))
def test_rotate_balanced(pool, n):
    hits = {p: 0 for p in pool}
    for i in range(n):
        hits[rotate_provider(pool, Stage.CAPTION, i)] += 1
    lo, hi = n // len(pool), -(-n // len(pool))
    assert all(count in (lo, hi) for count in hits.values())


def test_prompt_validation():
    with pytest.raises(ValueError):
        VisionPrompt(system_text="s", user_text="u", temperature=3.0)
    with pytest.raises(ValueError):
        VisionPrompt(system_text="s", user_text="u", max_output_tokens=0)
