"""Rubric-based scoring of open-ended answers by a judge provider.

Each response is scored 1-5 on relevance, trustworthiness, clarity, and
coherence; the judgment is repeated (default three times at temperature 0.7)
and criterion scores are the means over repetitions.  The overall score is
the mean of the four criterion means.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Optional

from ..agents import PromptLibrary
from ..providers import ProviderRegistry, RetryPolicy, VisionPrompt, complete_vision

CRITERIA = ("relevance", "trustworthiness", "clarity", "coherence")
_NO_RETRY = RetryPolicy(max_retries=0, base_backoff=0.0)


class UnparsableJudgment(Exception):
    """The judge did not produce four in-range integers, even after a re-ask."""


@dataclass(frozen=True)
class JudgeConfig:
    provider: str
    repetitions: int = 3
    temperature: float = 0.7
    parallelism: int = 4


@dataclass(frozen=True)
class RubricScores:
    relevance: float
    trustworthiness: float
    clarity: float
    coherence: float
    overall: float
    repetitions: int
    per_repetition_raw: tuple[tuple[int, int, int, int], ...]

    def as_dict(self) -> dict:
        return {
            "relevance": self.relevance,
            "trustworthiness": self.trustworthiness,
            "clarity": self.clarity,
            "coherence": self.coherence,
            "overall": self.overall,
            "repetitions": self.repetitions,
            "per_repetition_raw": [list(t) for t in self.per_repetition_raw],
        }


def _parse_scores(text: str) -> Optional[tuple[int, int, int, int]]:
    try:
        payload = json.loads(text)
        values = tuple(int(payload[c]) for c in CRITERIA)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError):
        found = re.findall(r"\b[0-9]+\b", text)
        if len(found) < 4:
            return None
        values = tuple(int(x) for x in found[:4])
    if all(1 <= v <= 5 for v in values):
        return values  # type: ignore[return-value]
    return None


def scores_from_repetitions(raw: list[tuple[int, int, int, int]]) -> RubricScores:
    means = [sum(rep[i] for rep in raw) / len(raw) for i in range(4)]
    return RubricScores(
        relevance=means[0], trustworthiness=means[1], clarity=means[2], coherence=means[3],
        overall=sum(means) / 4.0, repetitions=len(raw),
        per_repetition_raw=tuple(raw),
    )


def judge_open_ended(question: str, gt_answer: str, image_path: Optional[str],
                     model_response: str, judge_cfg: JudgeConfig,
                     registry: ProviderRegistry, prompts: PromptLibrary,
                     item_key: str = "") -> RubricScores:
    provider = registry.get(judge_cfg.provider)
    raw: list[tuple[int, int, int, int]] = []
    for rep in range(1, judge_cfg.repetitions + 1):
        scores = None
        for retry in ("", "/retry"):
            prompt = VisionPrompt(
                system_text="You are a strict rubric grader for driving-scene VQA.",
                user_text=prompts.render("judge", question=question, gt_answer=gt_answer,
                                         response=model_response),
                image_path=image_path,
                temperature=judge_cfg.temperature,
                response_schema_hint=json.dumps({"kind": "judge"}),
                request_id=f"{item_key}/judge/{rep}{retry}",
            )
            response = complete_vision(provider, prompt, _NO_RETRY)
            scores = _parse_scores(response.text)
            if scores is not None:
                break
        if scores is None:
            raise UnparsableJudgment(
                f"judge returned unusable scores for {item_key or question!r} on repetition {rep}")
        raw.append(scores)
    return scores_from_repetitions(raw)
