"""Dataset emission and parsing: COCO-caption and VQAv2-style files with a
lossless sidecar, corpus splitting, summary statistics, and finite-population
review sampling."""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, replace
from pathlib import Path
from statistics import NormalDist
from typing import Iterable, Mapping, Sequence

from .records import (
    Answer,
    AnswerConfidence,
    AnswerMode,
    Caption,
    ClosedType,
    Difficulty,
    ExpectedAnswerType,
    ImageRecord,
    QaItem,
    RecordStatus,
    Split,
    Stage,
    trace_from_dict,
    trace_to_dict,
)
from .textnorm import modal_answer, word_count


class IncompleteRecord(Exception):
    pass


# VQAv2 keeps answer_type in its own three-way vocabulary; our richer
# expected_answer_type lives in the sidecar.
_VQA_ANSWER_TYPE = {
    ClosedType.COUNTING: "number",
    ClosedType.EXISTENCE: "yes/no",
    ClosedType.KEY_OBJECT: "yes/no",
    ClosedType.UNCERTAINTY: "other",
    ClosedType.TYPE: "other",
}


def _require_complete(records: Sequence[ImageRecord]) -> None:
    for r in records:
        if r.status is not RecordStatus.COMPLETE:
            raise IncompleteRecord(f"record {r.image_id} is {r.status.value}, not complete")
        if r.caption is None or not r.caption.text.strip():
            raise IncompleteRecord(f"record {r.image_id} has no caption")


def _int_ids(records: Sequence[ImageRecord]) -> dict[str, int]:
    return {r.image_id: i + 1 for i, r in enumerate(sorted(records, key=lambda r: r.image_id))}


def export_coco_captions(records: Sequence[ImageRecord], path: Path) -> Path:
    """One caption annotation per image, COCO Caption file shape."""
    _require_complete(records)
    ids = _int_ids(records)
    doc = {
        "images": [
            {"id": ids[r.image_id], "file_name": Path(r.file_path).name}
            for r in sorted(records, key=lambda r: r.image_id)
        ],
        "annotations": [
            {"id": ids[r.image_id], "image_id": ids[r.image_id], "caption": r.caption.text}
            for r in sorted(records, key=lambda r: r.image_id)
        ],
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path


def export_vqa(records: Sequence[ImageRecord], questions_path: Path,
               annotations_path: Path) -> None:
    """VQAv2-style questions + annotations files.

    Only fields that standard VQA tooling understands go here; everything
    else (difficulty, our answer-type taxonomy, traces) goes to the sidecar.
    """
    _require_complete(records)
    ids = _int_ids(records)
    questions = []
    annotations = []
    for r in sorted(records, key=lambda r: r.image_id):
        for qi, item in enumerate(r.qa_items):
            qid = ids[r.image_id] * 10 + qi + 1
            questions.append({
                "image_id": ids[r.image_id],
                "question": item.question_text,
                "question_id": qid,
            })
            annotations.append({
                "question_id": qid,
                "image_id": ids[r.image_id],
                "question_type": (item.closed_type.value
                                  if item.closed_type else "open"),
                "answer_type": (_VQA_ANSWER_TYPE[item.closed_type]
                                if item.closed_type else "other"),
                "multiple_choice_answer": (item.multiple_choice_answer
                                           or modal_answer([a.text for a in item.answers])),
                "answers": [
                    {"answer": a.text, "answer_confidence": a.confidence.value,
                     "answer_id": a.answer_id}
                    for a in item.answers
                ],
            })
    questions_path.parent.mkdir(parents=True, exist_ok=True)
    questions_path.write_text(json.dumps({"questions": questions}, indent=2) + "\n")
    annotations_path.write_text(json.dumps({"annotations": annotations}, indent=2) + "\n")


def export_sidecar(records: Sequence[ImageRecord], path: Path) -> None:
    """Everything the two standard formats cannot carry, keyed by our ids."""
    ids = _int_ids(records)
    images = {}
    questions = {}
    for r in sorted(records, key=lambda r: r.image_id):
        images[r.image_id] = {
            "int_id": ids[r.image_id],
            "file_path": r.file_path,
            "split": r.split.value,
            "status": r.status.value,
            "caption_meta": {
                "generator_model": r.caption.generator_model,
                "temperature": r.caption.temperature,
            },
            "trace": trace_to_dict(r.trace),
            "detections": [
                {"label": d.label, "box": list(d.box), "uncertainty": d.uncertainty}
                for d in r.detections
            ],
        }
        for qi, item in enumerate(r.qa_items):
            questions[item.question_id] = {
                "int_id": ids[r.image_id] * 10 + qi + 1,
                "image_id": r.image_id,
                "answer_mode": item.answer_mode.value,
                "closed_type": item.closed_type.value if item.closed_type else None,
                "difficulty": item.difficulty.value,
                "expected_answer_type": item.expected_answer_type.value,
                "multiple_choice_answer": item.multiple_choice_answer,
                "answers_meta": [
                    {"answer_type": a.answer_type, "generator_model": a.generator_model}
                    for a in item.answers
                ],
            }
    path.write_text(json.dumps({"images": images, "questions": questions}, indent=2) + "\n")


def export_dataset(records: Sequence[ImageRecord], out_dir: Path) -> dict[str, list[Path]]:
    """Write captions/questions/annotations/metadata files per split."""
    out_dir.mkdir(parents=True, exist_ok=True)
    written: dict[str, list[Path]] = {}
    by_split: dict[str, list[ImageRecord]] = {}
    for r in records:
        by_split.setdefault(r.split.value, []).append(r)
    for split, group in sorted(by_split.items()):
        cap = out_dir / f"captions_{split}.json"
        qs = out_dir / f"questions_{split}.json"
        ann = out_dir / f"annotations_{split}.json"
        meta = out_dir / f"metadata_{split}.json"
        export_coco_captions(group, cap)
        export_vqa(group, qs, ann)
        export_sidecar(group, meta)
        written[split] = [cap, qs, ann, meta]
    return written


def import_dataset(out_dir: Path, split: str) -> list[ImageRecord]:
    """Rebuild full records from the three format files plus the sidecar."""
    captions = json.loads((out_dir / f"captions_{split}.json").read_text())
    questions = json.loads((out_dir / f"questions_{split}.json").read_text())
    annotations = json.loads((out_dir / f"annotations_{split}.json").read_text())
    sidecar = json.loads((out_dir / f"metadata_{split}.json").read_text())

    caption_by_int = {a["image_id"]: a["caption"] for a in captions["annotations"]}
    question_by_int = {q["question_id"]: q for q in questions["questions"]}
    ann_by_int = {a["question_id"]: a for a in annotations["annotations"]}

    int_to_image = {meta["int_id"]: image_id for image_id, meta in sidecar["images"].items()}
    qmeta_by_image: dict[str, list[tuple[str, dict]]] = {}
    for qid_str, qmeta in sidecar["questions"].items():
        qmeta_by_image.setdefault(qmeta["image_id"], []).append((qid_str, qmeta))

    records = []
    for int_id in sorted(int_to_image):
        image_id = int_to_image[int_id]
        imeta = sidecar["images"][image_id]
        caption = Caption.from_text(
            caption_by_int[int_id],
            imeta["caption_meta"]["generator_model"],
            imeta["caption_meta"]["temperature"],
        )
        items = []
        for qid_str, qmeta in sorted(qmeta_by_image.get(image_id, []),
                                     key=lambda kv: kv[1]["int_id"]):
            ann = ann_by_int[qmeta["int_id"]]
            answers = tuple(
                Answer(answer_id=a["answer_id"], text=a["answer"],
                       confidence=AnswerConfidence(a["answer_confidence"]),
                       answer_type=m["answer_type"], generator_model=m["generator_model"])
                for a, m in zip(ann["answers"], qmeta["answers_meta"])
            )
            items.append(QaItem(
                question_id=qid_str,
                question_text=question_by_int[qmeta["int_id"]]["question"],
                answer_mode=AnswerMode(qmeta["answer_mode"]),
                closed_type=ClosedType(qmeta["closed_type"]) if qmeta["closed_type"] else None,
                difficulty=Difficulty(qmeta["difficulty"]),
                expected_answer_type=ExpectedAnswerType(qmeta["expected_answer_type"]),
                answers=answers,
                multiple_choice_answer=qmeta["multiple_choice_answer"],
            ))
        from .records import DetectionAnnotation
        records.append(ImageRecord(
            image_id=image_id,
            file_path=imeta["file_path"],
            caption=caption,
            qa_items=tuple(items),
            detections=tuple(
                DetectionAnnotation(label=d["label"], box=tuple(d["box"]),
                                    uncertainty=d["uncertainty"])
                for d in imeta.get("detections", [])
            ),
            trace=trace_from_dict(imeta["trace"]),
            split=Split(imeta["split"]),
            status=RecordStatus(imeta["status"]),
        ))
    return records


# ---------------------------------------------------------------------------
# Splitting


def split_dataset(records: Sequence[ImageRecord], ratio: float,
                  seed: int) -> tuple[list[str], list[str]]:
    """Seeded image-level split: all five questions of an image stay together.

    Train takes floor(n * ratio) images after a seeded shuffle; the remainder
    goes to test.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must be in (0, 1)")
    ids = sorted(r.image_id for r in records)
    rng = random.Random(seed)
    rng.shuffle(ids)
    n_train = int(len(ids) * ratio + 1e-9)
    return ids[:n_train], ids[n_train:]


def apply_split(records: Sequence[ImageRecord], train_ids: Iterable[str],
                test_ids: Iterable[str]) -> list[ImageRecord]:
    train = set(train_ids)
    test = set(test_ids)
    out = []
    for r in records:
        if r.image_id in train:
            out.append(replace(r, split=Split.TRAIN))
        elif r.image_id in test:
            out.append(replace(r, split=Split.TEST))
        else:
            out.append(r)
    return out


# ---------------------------------------------------------------------------
# Statistics


@dataclass(frozen=True)
class DatasetStats:
    n_questions: Mapping[str, int]
    n_answers: Mapping[str, int]
    n_captions: Mapping[str, int]
    avg_question_len: Mapping[str, float]
    avg_answer_len: Mapping[str, float]
    avg_caption_len: Mapping[str, float]
    difficulty_counts: Mapping[str, tuple[int, float]]
    question_mode_counts: Mapping[str, tuple[int, float]]
    answer_type_counts: Mapping[str, tuple[int, float]]
    attempt_means: Mapping[str, float]
    attempt_histograms: Mapping[str, Mapping[int, int]]

    def to_dict(self) -> dict:
        def dist(m: Mapping[str, tuple[int, float]]) -> dict:
            return {k: {"count": c, "percent": p} for k, (c, p) in m.items()}
        return {
            "n_questions": dict(self.n_questions),
            "n_answers": dict(self.n_answers),
            "n_captions": dict(self.n_captions),
            "avg_question_len": dict(self.avg_question_len),
            "avg_answer_len": dict(self.avg_answer_len),
            "avg_caption_len": dict(self.avg_caption_len),
            "difficulty_counts": dist(self.difficulty_counts),
            "question_mode_counts": dist(self.question_mode_counts),
            "answer_type_counts": dist(self.answer_type_counts),
            "attempt_means": dict(self.attempt_means),
            "attempt_histograms": {
                stage: {str(k): v for k, v in hist.items()}
                for stage, hist in self.attempt_histograms.items()
            },
        }


def largest_remainder_percents(counts: Sequence[int]) -> list[float]:
    """Percentages at one-decimal precision that sum to exactly 100.0."""
    total = sum(counts)
    if total == 0:
        return [0.0 for _ in counts]
    tenths = [c * 1000 / total for c in counts]
    base = [math.floor(t) for t in tenths]
    deficit = 1000 - sum(base)
    order = sorted(range(len(counts)), key=lambda i: (-(tenths[i] - base[i]), i))
    for i in order[:deficit]:
        base[i] += 1
    return [b / 10 for b in base]


def _distribution(counter: Mapping[str, int], keys: Sequence[str]) -> dict[str, tuple[int, float]]:
    counts = [counter.get(k, 0) for k in keys]
    percents = largest_remainder_percents(counts)
    return {k: (c, p) for k, c, p in zip(keys, counts, percents)}


def compute_stats(records: Sequence[ImageRecord]) -> DatasetStats:
    """Aggregate the corpus the way the dataset summary table expects.

    Counts and average word lengths are reported per split; content
    distributions and generation-attempt statistics are corpus-wide.
    Word counts are whitespace tokenization.
    """
    splits = sorted({r.split.value for r in records})
    n_q: dict[str, int] = {}
    n_a: dict[str, int] = {}
    n_c: dict[str, int] = {}
    q_words: dict[str, list[int]] = {s: [] for s in splits}
    a_words: dict[str, list[int]] = {s: [] for s in splits}
    c_words: dict[str, list[int]] = {s: [] for s in splits}
    difficulty: dict[str, int] = {}
    modes: dict[str, int] = {}
    answer_types: dict[str, int] = {}
    cap_attempts: list[int] = []
    q_attempts: list[int] = []
    ans_attempts: list[int] = []

    for r in records:
        s = r.split.value
        n_c[s] = n_c.get(s, 0) + (1 if r.caption else 0)
        if r.caption:
            c_words[s].append(word_count(r.caption.text))
        n_q[s] = n_q.get(s, 0) + len(r.qa_items)
        for item in r.qa_items:
            q_words[s].append(word_count(item.question_text))
            n_a[s] = n_a.get(s, 0) + len(item.answers)
            for a in item.answers:
                a_words[s].append(word_count(a.text))
            difficulty[item.difficulty.value] = difficulty.get(item.difficulty.value, 0) + 1
            modes[item.answer_mode.value] = modes.get(item.answer_mode.value, 0) + 1
            key = item.expected_answer_type.value
            answer_types[key] = answer_types.get(key, 0) + 1
        if r.trace.caption_attempts:
            cap_attempts.append(r.trace.caption_attempts)
        if r.trace.question_attempts:
            q_attempts.append(r.trace.question_attempts)
        ans_attempts.extend(r.trace.answer_attempts.values())

    def avg(values: list[int]) -> float:
        return sum(values) / len(values) if values else 0.0

    def hist(values: list[int]) -> dict[int, int]:
        out: dict[int, int] = {}
        for v in values:
            out[v] = out.get(v, 0) + 1
        return dict(sorted(out.items()))

    return DatasetStats(
        n_questions={s: n_q.get(s, 0) for s in splits},
        n_answers={s: n_a.get(s, 0) for s in splits},
        n_captions={s: n_c.get(s, 0) for s in splits},
        avg_question_len={s: avg(q_words[s]) for s in splits},
        avg_answer_len={s: avg(a_words[s]) for s in splits},
        avg_caption_len={s: avg(c_words[s]) for s in splits},
        difficulty_counts=_distribution(difficulty, [d.value for d in Difficulty]),
        question_mode_counts=_distribution(modes, [m.value for m in AnswerMode]),
        answer_type_counts=_distribution(answer_types,
                                         [t.value for t in ExpectedAnswerType]),
        attempt_means={
            Stage.CAPTION.value: avg(cap_attempts),
            Stage.QUESTION.value: avg(q_attempts),
            Stage.ANSWER.value: avg(ans_attempts),
        },
        attempt_histograms={
            Stage.CAPTION.value: hist(cap_attempts),
            Stage.QUESTION.value: hist(q_attempts),
            Stage.ANSWER.value: hist(ans_attempts),
        },
    )


def save_stats(stats: DatasetStats, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(stats.to_dict(), indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# Finite-population review sampling


@dataclass(frozen=True)
class ReviewSample:
    population_size: int
    confidence: float
    margin: float
    assumed_proportion: float
    sample_size: int
    item_ids: tuple[str, ...]
    seed: int
    clamped: bool = False

    def to_dict(self) -> dict:
        return {
            "population_size": self.population_size,
            "confidence": self.confidence,
            "margin": self.margin,
            "assumed_proportion": self.assumed_proportion,
            "sample_size": self.sample_size,
            "item_ids": list(self.item_ids),
            "seed": self.seed,
            "clamped": self.clamped,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReviewSample":
        return cls(
            population_size=d["population_size"], confidence=d["confidence"],
            margin=d["margin"], assumed_proportion=d["assumed_proportion"],
            sample_size=d["sample_size"], item_ids=tuple(d["item_ids"]),
            seed=d["seed"], clamped=d.get("clamped", False),
        )


def cochran_sample_size(population_size: int, confidence: float, margin: float,
                        assumed_proportion: float) -> tuple[int, float, bool]:
    """Cochran's sample size with finite-population correction.

    n0 = z^2 p(1-p) / e^2, corrected to n = ceil(n0 / (1 + (n0-1)/N)).
    Returns (n, n0, clamped).  The corrected size saturates at N as the
    margin shrinks; ``clamped`` flags that degenerate census case (the
    whole population must be reviewed).
    """
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must be in (0, 1)")
    if not 0.0 < margin < 1.0:
        raise ValueError("margin must be in (0, 1)")
    if not 0.0 < assumed_proportion < 1.0:
        raise ValueError("assumed_proportion must be in (0, 1)")
    if population_size < 1:
        raise ValueError("population must be non-empty")
    z = NormalDist().inv_cdf(0.5 + confidence / 2.0)
    n0 = (z ** 2) * assumed_proportion * (1 - assumed_proportion) / (margin ** 2)
    n = math.ceil(n0 / (1 + (n0 - 1) / population_size))
    clamped = n >= population_size
    return min(n, population_size), n0, clamped


def sample_for_review(population_ids: Sequence[str], confidence: float, margin: float,
                      assumed_proportion: float, seed: int) -> ReviewSample:
    """Draw a seeded, without-replacement review sample of Cochran size."""
    ids = sorted(set(population_ids))
    n, _, clamped = cochran_sample_size(len(ids), confidence, margin, assumed_proportion)
    rng = random.Random(seed)
    chosen = rng.sample(ids, n)
    return ReviewSample(
        population_size=len(ids), confidence=confidence, margin=margin,
        assumed_proportion=assumed_proportion, sample_size=n,
        item_ids=tuple(chosen), seed=seed, clamped=clamped,
    )


def margin_at_confidence(sample_size: int, population_size: int, confidence: float,
                         assumed_proportion: float = 0.5) -> float:
    """Achieved margin of error for a finite-population sample."""
    if sample_size < 1 or population_size < 2:
        return 0.0
    z = NormalDist().inv_cdf(0.5 + confidence / 2.0)
    fpc = (population_size - sample_size) / (population_size - 1)
    p = assumed_proportion
    return z * math.sqrt(p * (1 - p) / sample_size * max(0.0, fpc))


def save_review_sample(sample: ReviewSample, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(sample.to_dict(), indent=2) + "\n")
    return path


def load_review_sample(path: Path) -> ReviewSample:
    return ReviewSample.from_dict(json.loads(path.read_text()))
