from __future__ import annotations

import json
import random

import pytest

from foundry.evaluation import IdMismatch, JudgeConfig, evaluate_records
from foundry.records import AnswerMode

from conftest import build_complete_record, sim_registry


def _corpus(n=3):
    return [build_complete_record(image_id=f"img{i:03d}", n_closed=2 + i % 2)
            for i in range(n)]


def _closed_predictions(records):
    preds = []
    for r in records:
        for q in r.qa_items:
            if q.answer_mode is AnswerMode.CLOSED:
                preds.append({"question_id": q.question_id,
                              "text": q.multiple_choice_answer})
    return preds


def test_oracle_predictions_score_one():
    records = _corpus()
    report = evaluate_records(records, _closed_predictions(records))
    assert report.closed_accuracy == 1.0
    assert report.n_items["closed"] == sum(
        1 for r in records for q in r.qa_items if q.answer_mode is AnswerMode.CLOSED)


def test_empty_open_subset_has_no_rubric_section():
    records = _corpus()
    report = evaluate_records(records, _closed_predictions(records))
    assert report.rubric_means is None
    assert report.n_items["open"] == 0


def test_shuffled_predictions_identical_report():
    records = _corpus()
    preds = _closed_predictions(records)
    shuffled = preds[:]
    random.Random(5).shuffle(shuffled)
    assert evaluate_records(records, preds) == evaluate_records(records, shuffled)


def test_unknown_question_id_raises():
    records = _corpus()
    with pytest.raises(IdMismatch):
        evaluate_records(records, [{"question_id": "nope_q1", "text": "yes"}])


def test_unknown_image_id_raises():
    records = _corpus()
    with pytest.raises(IdMismatch):
        evaluate_records(records, [{"image_id": "ghost", "text": "a caption"}])


def test_caption_metrics_present():
    records = _corpus()
    preds = [{"image_id": r.image_id, "text": r.caption.text} for r in records]
    report = evaluate_records(records, preds)
    assert report.caption_metrics["bleu4"] == pytest.approx(1.0)
    assert report.caption_metrics["rouge_l"] == pytest.approx(1.0)
    assert report.caption_metrics["cider"] == pytest.approx(10.0)
    assert report.n_items["captions"] == 3


def test_single_caption_omits_cider():
    records = _corpus()
    preds = [{"image_id": records[0].image_id, "text": records[0].caption.text}]
    report = evaluate_records(records, preds)
    assert "cider" not in report.caption_metrics
    assert "bleu4" in report.caption_metrics


def test_open_items_judged_when_configured(prompts):
    records = _corpus(2)
    scores = json.dumps({"relevance": 4, "trustworthiness": 4, "clarity": 4, "coherence": 4})
    registry = sim_registry(overrides={"judge": (scores,) * 100})
    preds = []
    for r in records:
        for q in r.qa_items:
            if q.answer_mode is AnswerMode.OPEN:
                preds.append({"question_id": q.question_id, "text": "glare hides the lane"})
    report = evaluate_records(records, preds, JudgeConfig(provider="sim-v"),
                              registry, prompts)
    assert report.rubric_means is not None
    assert report.rubric_means["overall"] == pytest.approx(4.0)
    assert report.n_items["open"] == len(preds)
    assert report.n_items["judge_failures"] == 0


def test_report_serialization_round_trip(tmp_path):
    from foundry.evaluation import save_report
    records = _corpus()
    report = evaluate_records(records, _closed_predictions(records))
    path = save_report(report, tmp_path / "eval_report.json")
    loaded = json.loads(path.read_text())
    assert loaded["closed_accuracy"] == 1.0
    assert set(loaded) == {"closed_accuracy", "caption_metrics", "rubric_means",
                           "n_items", "per_item"}
