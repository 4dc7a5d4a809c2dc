"""Metric suite: closed-ended accuracy, caption metrics, and the LLM judge."""

from .evaluate import EvalReport, IdMismatch, evaluate_records, load_predictions, save_report
from .judging import (
    CRITERIA,
    JudgeConfig,
    RubricScores,
    UnparsableJudgment,
    judge_open_ended,
    scores_from_repetitions,
)
from .metrics import (
    CorpusTooSmall,
    bleu4,
    cider,
    meteor_lite,
    rouge_l,
    vqa_accuracy,
)
from ..textnorm import normalize_answer

__all__ = [
    "EvalReport", "IdMismatch", "evaluate_records", "load_predictions", "save_report",
    "CRITERIA", "JudgeConfig", "RubricScores", "UnparsableJudgment", "judge_open_ended",
    "scores_from_repetitions", "CorpusTooSmall", "bleu4", "cider", "meteor_lite",
    "rouge_l", "vqa_accuracy", "normalize_answer",
]
