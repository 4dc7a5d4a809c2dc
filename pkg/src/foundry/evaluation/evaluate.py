"""Dataset-level evaluation: closed accuracy, caption metrics, and the
open-ended judge, aggregated into one report."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from ..agents import PromptLibrary
from ..providers import ProviderRegistry
from ..records import AnswerMode, ImageRecord, RecordStatus
from .judging import JudgeConfig, RubricScores, UnparsableJudgment, judge_open_ended
from .metrics import CorpusTooSmall, bleu4, cider, meteor_lite, rouge_l, vqa_accuracy


class IdMismatch(Exception):
    pass


@dataclass(frozen=True)
class EvalReport:
    closed_accuracy: Optional[float]
    caption_metrics: dict[str, float]
    rubric_means: Optional[dict[str, float]]
    n_items: dict[str, int]
    per_item: dict[str, dict]

    def to_dict(self) -> dict:
        return {
            "closed_accuracy": self.closed_accuracy,
            "caption_metrics": self.caption_metrics,
            "rubric_means": self.rubric_means,
            "n_items": self.n_items,
            "per_item": self.per_item,
        }


def load_predictions(path: Path) -> list[dict]:
    payload = json.loads(path.read_text())
    if not isinstance(payload, list):
        raise ValueError("predictions file must be a JSON array")
    return payload


def evaluate_records(records: list[ImageRecord], predictions: list[dict],
                     judge_cfg: Optional[JudgeConfig] = None,
                     registry: Optional[ProviderRegistry] = None,
                     prompts: Optional[PromptLibrary] = None) -> EvalReport:
    """Score predictions against complete records.

    Prediction entries carry either a ``question_id`` (VQA) or an
    ``image_id`` (caption) plus ``text``.  Closed items get consensus
    accuracy; open items go to the judge when a judge config is given;
    caption predictions get the caption metric suite.
    """
    records = [r for r in records if r.status is RecordStatus.COMPLETE]
    items = {q.question_id: (r, q) for r in records for q in r.qa_items}
    images = {r.image_id: r for r in records}

    closed_scores: dict[str, float] = {}
    open_preds: dict[str, str] = {}
    caption_preds: dict[str, str] = {}
    for entry in sorted(predictions, key=lambda e: str(e.get("question_id") or e.get("image_id"))):
        text = entry.get("text", "")
        qid = entry.get("question_id")
        if qid is not None:
            if qid not in items:
                raise IdMismatch(f"prediction references unknown question_id {qid!r}")
            _, item = items[qid]
            if item.answer_mode is AnswerMode.CLOSED:
                closed_scores[qid] = vqa_accuracy(text, [a.text for a in item.answers])
            else:
                open_preds[qid] = text
            continue
        iid = entry.get("image_id")
        if iid is None:
            raise IdMismatch("prediction entry has neither question_id nor image_id")
        if iid not in images:
            raise IdMismatch(f"prediction references unknown image_id {iid!r}")
        caption_preds[iid] = text

    per_item: dict[str, dict] = {}
    for qid, score in closed_scores.items():
        per_item[qid] = {"kind": "closed", "accuracy": score}

    rubric_means = None
    judge_failures = 0
    if open_preds and judge_cfg is not None:
        assert registry is not None and prompts is not None

        def judge_one(entry: tuple[str, str]) -> tuple[str, Optional[RubricScores]]:
            qid, text = entry
            record, item = items[qid]
            gt = item.answers[0].text if item.answers else ""
            try:
                return qid, judge_open_ended(item.question_text, gt, record.file_path,
                                             text, judge_cfg, registry, prompts,
                                             item_key=qid)
            except UnparsableJudgment:
                return qid, None

        # judge calls run concurrently up to the configured cap; aggregation
        # is order-independent
        with ThreadPoolExecutor(max_workers=max(1, judge_cfg.parallelism)) as pool:
            judged = list(pool.map(judge_one, sorted(open_preds.items())))
        raws: list[RubricScores] = []
        for qid, scores in judged:
            if scores is None:
                judge_failures += 1
                per_item[qid] = {"kind": "open", "judged": False}
            else:
                raws.append(scores)
                per_item[qid] = {"kind": "open", "judged": True, **scores.as_dict()}
        if raws:
            rubric_means = _aggregate_rubrics(raws)

    caption_metrics: dict[str, float] = {}
    if caption_preds:
        refs = {iid: [images[iid].caption.text] for iid in caption_preds}
        caption_metrics["bleu4"] = _mean(
            [bleu4(text, refs[iid]) for iid, text in caption_preds.items()])
        caption_metrics["rouge_l"] = _mean(
            [rouge_l(text, refs[iid]) for iid, text in caption_preds.items()])
        caption_metrics["meteor_lite"] = _mean(
            [meteor_lite(text, refs[iid]) for iid, text in caption_preds.items()])
        try:
            per_image, corpus = cider(dict(sorted(caption_preds.items())), refs)
            caption_metrics["cider"] = corpus
            for iid, score in per_image.items():
                per_item[f"caption:{iid}"] = {"kind": "caption", "cider": score}
        except CorpusTooSmall:
            pass

    closed_accuracy = _mean(list(closed_scores.values())) if closed_scores else None
    n_items = {
        "closed": len(closed_scores),
        "open": len(open_preds),
        "captions": len(caption_preds),
        "judge_failures": judge_failures,
    }
    return EvalReport(closed_accuracy=closed_accuracy, caption_metrics=caption_metrics,
                      rubric_means=rubric_means, n_items=n_items, per_item=per_item)


def _mean(values: list[float]) -> float:
    return sum(values) / len(values) if values else 0.0


def _aggregate_rubrics(raws: list[RubricScores]) -> dict[str, float]:
    out = {
        "relevance": _mean([r.relevance for r in raws]),
        "trustworthiness": _mean([r.trustworthiness for r in raws]),
        "clarity": _mean([r.clarity for r in raws]),
        "coherence": _mean([r.coherence for r in raws]),
    }
    out["overall"] = sum(out.values()) / 4.0
    return out


def save_report(report: EvalReport, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return path
