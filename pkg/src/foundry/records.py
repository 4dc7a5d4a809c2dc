"""Shared domain model: images, captions, questions, answers, traces, config.

Every other module depends only on the types in this file.  All types are
immutable value objects; collections are stored as tuples so records can be
copied freely between concurrent tasks.  The canonical on-disk form is one
JSON document per image under ``records/<image_id>.json`` (see
:func:`record_to_dict` for the exact field names).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional

from .textnorm import modal_answer, word_count


class Split(str, Enum):
    TRAIN = "train"
    TEST = "test"
    UNASSIGNED = "unassigned"


class RecordStatus(str, Enum):
    PENDING = "pending"
    COMPLETE = "complete"
    FAILED = "failed"


class AnswerMode(str, Enum):
    CLOSED = "closed"
    OPEN = "open"


class ClosedType(str, Enum):
    UNCERTAINTY = "uncertainty"
    EXISTENCE = "existence"
    TYPE = "type"
    COUNTING = "counting"
    KEY_OBJECT = "key_object"


class Difficulty(str, Enum):
    EASY = "easy"
    MEDIUM = "medium"
    HARD = "hard"


class ExpectedAnswerType(str, Enum):
    ANALYSIS = "analysis"
    YES_NO_MULTIPLE_CHOICE = "yes_no_multiple_choice"
    RECOMMENDATION = "recommendation"
    COUNT = "count"
    IDENTIFICATION = "identification"


class AnswerConfidence(str, Enum):
    YES = "yes"
    MAYBE = "maybe"
    NO = "no"


class Stage(str, Enum):
    CAPTION = "caption"
    QUESTION = "question"
    ANSWER = "answer"


class VerdictOutcome(str, Enum):
    PASS = "pass"
    FAIL = "fail"


REQUIRED_QUESTIONS = 5
REQUIRED_ANSWERS = 10
CLOSED_PER_IMAGE = (2, 3)  # inclusive bounds on closed-ended items per image


@dataclass(frozen=True)
class Caption:
    text: str
    word_count: int
    generator_model: str
    temperature: float

    @classmethod
    def from_text(cls, text: str, generator_model: str, temperature: float) -> "Caption":
        return cls(text=text, word_count=word_count(text),
                   generator_model=generator_model, temperature=temperature)


@dataclass(frozen=True)
class Answer:
    answer_id: int
    text: str
    confidence: AnswerConfidence
    answer_type: str
    generator_model: str


@dataclass(frozen=True)
class QaItem:
    question_id: str
    question_text: str
    answer_mode: AnswerMode
    closed_type: Optional[ClosedType]
    difficulty: Difficulty
    expected_answer_type: ExpectedAnswerType
    answers: tuple[Answer, ...] = ()
    multiple_choice_answer: Optional[str] = None

    def with_answers(self, answers: Iterable[Answer]) -> "QaItem":
        answers = tuple(answers)
        mca = None
        if self.answer_mode is AnswerMode.CLOSED and answers:
            mca = modal_answer([a.text for a in answers])
        return replace(self, answers=answers, multiple_choice_answer=mca)


@dataclass(frozen=True)
class VerdictEntry:
    stage: Stage
    attempt: int
    verdict: VerdictOutcome
    reason: str


@dataclass(frozen=True)
class GenerationTrace:
    caption_attempts: int = 0
    question_attempts: int = 0
    answer_attempts: Mapping[str, int] = field(default_factory=dict)
    verdicts: tuple[VerdictEntry, ...] = ()


@dataclass(frozen=True)
class DetectionAnnotation:
    """Opaque detector output forwarded into prompts; never interpreted here."""
    label: str
    box: tuple[float, float, float, float]
    uncertainty: str


@dataclass(frozen=True)
class StageFailure:
    stage: Stage
    question_id: Optional[str] = None


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    file_path: str
    caption: Optional[Caption] = None
    qa_items: tuple[QaItem, ...] = ()
    detections: tuple[DetectionAnnotation, ...] = ()
    trace: GenerationTrace = field(default_factory=GenerationTrace)
    split: Split = Split.UNASSIGNED
    status: RecordStatus = RecordStatus.PENDING
    failure: Optional[StageFailure] = None


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs for the generation pipeline.

    ``providers`` is the ordered rotation pool used by the caption and
    question agents; the answer agent takes the first two pool members.
    Validation always runs on its own provider so verdicts are issued
    independently from generation.
    """
    providers: tuple[str, ...]
    validation_provider: str
    agent_temperatures: Mapping[Stage, float] = field(
        default_factory=lambda: {Stage.CAPTION: 0.8, Stage.QUESTION: 0.9, Stage.ANSWER: 0.7})
    max_attempts: Mapping[Stage, int] = field(
        default_factory=lambda: {Stage.CAPTION: 5, Stage.QUESTION: 5, Stage.ANSWER: 5})
    parallelism: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.providers:
            raise ValueError("providers must be non-empty")
        for stage, cap in self.max_attempts.items():
            if cap < 1:
                raise ValueError(f"max_attempts[{stage.value}] must be >= 1")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")


@dataclass(frozen=True)
class StructuralViolation:
    field: str
    message: str
    question_id: Optional[str] = None


def validate_record(record: ImageRecord) -> list[StructuralViolation]:
    """Check every structural invariant; returns [] iff the record is sound.

    Total function: never raises, reports each broken invariant with the
    offending field (and question id where applicable).
    """
    out: list[StructuralViolation] = []
    complete = record.status is RecordStatus.COMPLETE

    if record.caption is not None:
        cap = record.caption
        if cap.word_count != word_count(cap.text):
            out.append(StructuralViolation(
                "caption.word_count",
                f"word_count {cap.word_count} != whitespace tokens {word_count(cap.text)}"))
        if not 0.0 <= cap.temperature <= 2.0:
            out.append(StructuralViolation(
                "caption.temperature", f"temperature {cap.temperature} outside [0, 2]"))
    if complete and (record.caption is None or not record.caption.text.strip()):
        out.append(StructuralViolation("caption", "complete record requires a non-empty caption"))

    if complete and len(record.qa_items) != REQUIRED_QUESTIONS:
        out.append(StructuralViolation(
            "qa_items", f"complete record has {len(record.qa_items)} questions, expected {REQUIRED_QUESTIONS}"))
    if complete and len(record.qa_items) == REQUIRED_QUESTIONS:
        closed = sum(1 for q in record.qa_items if q.answer_mode is AnswerMode.CLOSED)
        lo, hi = CLOSED_PER_IMAGE
        if not lo <= closed <= hi:
            out.append(StructuralViolation(
                "qa_items", f"{closed} closed-ended items, expected between {lo} and {hi}"))

    for item in record.qa_items:
        has_closed_type = item.closed_type is not None
        if (item.answer_mode is AnswerMode.CLOSED) != has_closed_type:
            out.append(StructuralViolation(
                "closed_type",
                "closed_type must be present iff answer_mode is closed",
                question_id=item.question_id))
        if complete and len(item.answers) != REQUIRED_ANSWERS:
            out.append(StructuralViolation(
                "answers",
                f"{len(item.answers)} answers, expected {REQUIRED_ANSWERS}",
                question_id=item.question_id))
        if item.answers:
            ids = sorted(a.answer_id for a in item.answers)
            if complete and ids != list(range(1, REQUIRED_ANSWERS + 1)):
                out.append(StructuralViolation(
                    "answers.answer_id",
                    f"answer ids {ids} do not cover 1..{REQUIRED_ANSWERS}",
                    question_id=item.question_id))
        if item.multiple_choice_answer is not None and item.answers:
            expect = modal_answer([a.text for a in item.answers])
            if item.multiple_choice_answer != expect:
                out.append(StructuralViolation(
                    "multiple_choice_answer",
                    f"{item.multiple_choice_answer!r} is not the modal normalized answer {expect!r}",
                    question_id=item.question_id))

    trace = record.trace
    by_stage = {Stage.CAPTION: 0, Stage.QUESTION: 0, Stage.ANSWER: 0}
    for entry in trace.verdicts:
        by_stage[entry.stage] += 1
    if trace.caption_attempts != by_stage[Stage.CAPTION]:
        out.append(StructuralViolation(
            "trace.caption_attempts",
            f"{trace.caption_attempts} attempts but {by_stage[Stage.CAPTION]} caption verdicts"))
    if trace.question_attempts != by_stage[Stage.QUESTION]:
        out.append(StructuralViolation(
            "trace.question_attempts",
            f"{trace.question_attempts} attempts but {by_stage[Stage.QUESTION]} question verdicts"))
    answer_total = sum(trace.answer_attempts.values())
    if answer_total != by_stage[Stage.ANSWER]:
        out.append(StructuralViolation(
            "trace.answer_attempts",
            f"{answer_total} attempts but {by_stage[Stage.ANSWER]} answer verdicts"))
    return out


# ---------------------------------------------------------------------------
# Canonical JSON serialization


def caption_to_dict(cap: Caption) -> dict:
    return {"text": cap.text, "word_count": cap.word_count,
            "generator_model": cap.generator_model, "temperature": cap.temperature}


def caption_from_dict(d: dict) -> Caption:
    return Caption(text=d["text"], word_count=d["word_count"],
                   generator_model=d["generator_model"], temperature=d["temperature"])


def answer_to_dict(a: Answer) -> dict:
    return {"answer_id": a.answer_id, "text": a.text, "confidence": a.confidence.value,
            "answer_type": a.answer_type, "generator_model": a.generator_model}


def answer_from_dict(d: dict) -> Answer:
    return Answer(answer_id=d["answer_id"], text=d["text"],
                  confidence=AnswerConfidence(d["confidence"]),
                  answer_type=d["answer_type"], generator_model=d["generator_model"])


def qa_item_to_dict(q: QaItem) -> dict:
    return {
        "question_id": q.question_id,
        "question_text": q.question_text,
        "answer_mode": q.answer_mode.value,
        "closed_type": q.closed_type.value if q.closed_type else None,
        "difficulty": q.difficulty.value,
        "expected_answer_type": q.expected_answer_type.value,
        "answers": [answer_to_dict(a) for a in q.answers],
        "multiple_choice_answer": q.multiple_choice_answer,
    }


def qa_item_from_dict(d: dict) -> QaItem:
    return QaItem(
        question_id=d["question_id"],
        question_text=d["question_text"],
        answer_mode=AnswerMode(d["answer_mode"]),
        closed_type=ClosedType(d["closed_type"]) if d.get("closed_type") else None,
        difficulty=Difficulty(d["difficulty"]),
        expected_answer_type=ExpectedAnswerType(d["expected_answer_type"]),
        answers=tuple(answer_from_dict(a) for a in d.get("answers", [])),
        multiple_choice_answer=d.get("multiple_choice_answer"),
    )


def trace_to_dict(t: GenerationTrace) -> dict:
    return {
        "caption_attempts": t.caption_attempts,
        "question_attempts": t.question_attempts,
        "answer_attempts": dict(t.answer_attempts),
        "verdicts": [
            {"stage": v.stage.value, "attempt": v.attempt,
             "verdict": v.verdict.value, "reason": v.reason}
            for v in t.verdicts
        ],
    }


def trace_from_dict(d: dict) -> GenerationTrace:
    return GenerationTrace(
        caption_attempts=d.get("caption_attempts", 0),
        question_attempts=d.get("question_attempts", 0),
        answer_attempts=dict(d.get("answer_attempts", {})),
        verdicts=tuple(
            VerdictEntry(stage=Stage(v["stage"]), attempt=v["attempt"],
                         verdict=VerdictOutcome(v["verdict"]), reason=v["reason"])
            for v in d.get("verdicts", [])
        ),
    )


def record_to_dict(r: ImageRecord) -> dict:
    return {
        "image_id": r.image_id,
        "file_path": r.file_path,
        "caption": caption_to_dict(r.caption) if r.caption else None,
        "qa_items": [qa_item_to_dict(q) for q in r.qa_items],
        "detections": [
            {"label": d.label, "box": list(d.box), "uncertainty": d.uncertainty}
            for d in r.detections
        ],
        "trace": trace_to_dict(r.trace),
        "split": r.split.value,
        "status": r.status.value,
        "failure": ({"stage": r.failure.stage.value, "question_id": r.failure.question_id}
                    if r.failure else None),
    }


def record_from_dict(d: dict) -> ImageRecord:
    failure = None
    if d.get("failure"):
        failure = StageFailure(stage=Stage(d["failure"]["stage"]),
                               question_id=d["failure"].get("question_id"))
    return ImageRecord(
        image_id=d["image_id"],
        file_path=d["file_path"],
        caption=caption_from_dict(d["caption"]) if d.get("caption") else None,
        qa_items=tuple(qa_item_from_dict(q) for q in d.get("qa_items", [])),
        detections=tuple(
            DetectionAnnotation(label=x["label"], box=tuple(x["box"]), uncertainty=x["uncertainty"])
            for x in d.get("detections", [])
        ),
        trace=trace_from_dict(d.get("trace", {})),
        split=Split(d.get("split", "unassigned")),
        status=RecordStatus(d.get("status", "pending")),
        failure=failure,
    )


def serialize_record(r: ImageRecord) -> str:
    return json.dumps(record_to_dict(r), indent=2, sort_keys=True)


def parse_record(text: str) -> ImageRecord:
    return record_from_dict(json.loads(text))


def save_record(r: ImageRecord, records_dir: Path) -> Path:
    records_dir.mkdir(parents=True, exist_ok=True)
    path = records_dir / f"{r.image_id}.json"
    path.write_text(serialize_record(r) + "\n")
    return path


def load_record(path: Path) -> ImageRecord:
    return parse_record(path.read_text())


def load_records(records_dir: Path) -> list[ImageRecord]:
    """Load every record document in a directory.

    Non-record JSON files (stats.json, eval_report.json, and other artifacts
    the CLI drops alongside records) are skipped; a record document is one
    with the image_id and file_path keys.
    """
    out = []
    for path in sorted(records_dir.glob("*.json")):
        doc = json.loads(path.read_text())
        if isinstance(doc, dict) and "image_id" in doc and "file_path" in doc:
            out.append(record_from_dict(doc))
    return out
