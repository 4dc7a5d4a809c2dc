"""The four collaborative agents (caption, question, answer, validation) and
the orchestrator that chains them with regeneration loops and trace recording.

Stage flow per image: caption -> questions -> answers, each followed by a
validation verdict from a dedicated provider.  A failed verdict regenerates
only that stage's artifact (answers regenerate per question); artifacts that
already passed are never touched again.  Every attempt leaves exactly one
verdict entry in the trace.
"""

from __future__ import annotations

import json
import random
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

from .providers import (
    ProviderRegistry,
    RetryPolicy,
    VisionPrompt,
    complete_vision,
    rotate_provider,
)
from .records import (
    Answer,
    AnswerConfidence,
    AnswerMode,
    Caption,
    ClosedType,
    Difficulty,
    ExpectedAnswerType,
    GenerationTrace,
    ImageRecord,
    PipelineConfig,
    QaItem,
    RecordStatus,
    REQUIRED_QUESTIONS,
    Stage,
    StageFailure,
    VerdictEntry,
    VerdictOutcome,
)
from .textnorm import normalize_answer


class AgentError(Exception):
    pass


class EmptyCompletion(AgentError):
    pass


class SchemaParseFailure(AgentError):
    """The generating model returned a structure we cannot parse."""


class ShortBatch(AgentError):
    """A provider returned fewer answers than requested, even after refills."""


class StageExhausted(AgentError):
    def __init__(self, stage: Stage, question_id: Optional[str] = None):
        super().__init__(f"stage {stage.value} exhausted"
                         + (f" on {question_id}" if question_id else ""))
        self.stage = stage
        self.question_id = question_id


class Mechanism(str, Enum):
    CAPTION_IMAGE_RELEVANCE = "caption_image_relevance"
    QUESTION_SOTIF_RELEVANCE = "question_sotif_relevance"
    ANSWER_CORRECTNESS = "answer_correctness"


_MECHANISM_BY_STAGE = {
    Stage.CAPTION: Mechanism.CAPTION_IMAGE_RELEVANCE,
    Stage.QUESTION: Mechanism.QUESTION_SOTIF_RELEVANCE,
    Stage.ANSWER: Mechanism.ANSWER_CORRECTNESS,
}


@dataclass(frozen=True)
class Verdict:
    passed: bool
    mechanism: Mechanism
    reason: str


@dataclass(frozen=True)
class ConsistencyReport:
    question_id: str
    trials: int
    affirmative_count: int
    consistent: bool
    majority_answer: str


OPEN_KINDS = ("risk_identification", "risk_explanation", "recommended_action")
ANSWERS_PER_BATCH = 5
_MAX_BATCH_REFILLS = 3
_NO_RETRY = RetryPolicy(max_retries=0, base_backoff=0.0)


class PromptLibrary:
    """Loads stage prompt templates from a directory, falling back to the
    packaged defaults.  Templates use {{name}} placeholders."""

    def __init__(self, directory: Optional[Path] = None):
        self.directory = Path(directory) if directory else None
        self._cache: dict[str, str] = {}

    def template(self, name: str) -> str:
        if name in self._cache:
            return self._cache[name]
        text = None
        if self.directory:
            candidate = self.directory / f"{name}.txt"
            if candidate.exists():
                text = candidate.read_text()
        if text is None:
            text = resources.files("foundry.prompts").joinpath(f"{name}.txt").read_text()
        self._cache[name] = text
        return text

    def render(self, name: str, **context) -> str:
        text = self.template(name)
        for key, value in context.items():
            text = text.replace("{{" + key + "}}", str(value))
        return text


def _plan_rng(seed: int, *parts) -> random.Random:
    import hashlib
    key = f"{seed}|" + "|".join(str(p) for p in parts) + "|plan"
    digest = hashlib.sha256(key.encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def draw_question_plan(seed: int, image_id: str, attempt: int = 1) -> tuple[list[str], list[str]]:
    """Seeded structural draw for one image's question set.

    Returns (closed_types, open_kinds): 2-3 closed categories drawn uniformly
    from the five closed types, and the complementary open kinds.
    """
    rng = _plan_rng(seed, image_id, "questions", attempt)
    closed_count = rng.choice((2, 3))
    closed_types = [rng.choice(list(ClosedType)).value for _ in range(closed_count)]
    open_kinds = rng.sample(OPEN_KINDS, REQUIRED_QUESTIONS - closed_count)
    return closed_types, open_kinds


def generate_caption(record: ImageRecord, cfg: PipelineConfig, registry: ProviderRegistry,
                     prompts: PromptLibrary, image_seq: int = 0, attempt: int = 1) -> Caption:
    provider_name = rotate_provider(cfg.providers, Stage.CAPTION, image_seq + attempt - 1)
    temperature = cfg.agent_temperatures[Stage.CAPTION]
    prompt = VisionPrompt(
        system_text="You are the image captioning agent in a driving-scene dataset pipeline.",
        user_text=prompts.render("caption", image_id=record.image_id),
        image_path=record.file_path,
        temperature=temperature,
        response_schema_hint=json.dumps({"kind": "caption", "image_id": record.image_id}),
        request_id=f"{record.image_id}/caption/{attempt}",
    )
    response = complete_vision(registry.get(provider_name), prompt, _NO_RETRY)
    text = response.text.strip()
    if not text:
        raise EmptyCompletion(f"caption for {record.image_id} came back empty")
    return Caption.from_text(text, response.model, temperature)


def generate_questions(record: ImageRecord, caption: Caption, cfg: PipelineConfig,
                       registry: ProviderRegistry, prompts: PromptLibrary,
                       image_seq: int = 0, attempt: int = 1) -> list[QaItem]:
    closed_types, open_kinds = draw_question_plan(cfg.seed, record.image_id, attempt)
    provider_name = rotate_provider(cfg.providers, Stage.QUESTION, image_seq + attempt - 1)
    detections = "; ".join(
        f"{d.label} (uncertainty {d.uncertainty})" for d in record.detections) or "none"
    prompt = VisionPrompt(
        system_text="You are the question generation agent in a driving-scene dataset pipeline.",
        user_text=prompts.render(
            "question", total=REQUIRED_QUESTIONS, closed_count=len(closed_types),
            open_count=len(open_kinds), caption=caption.text, detections=detections,
            closed_types=", ".join(closed_types), open_kinds=", ".join(open_kinds)),
        image_path=record.file_path,
        temperature=cfg.agent_temperatures[Stage.QUESTION],
        response_schema_hint=json.dumps({
            "kind": "questions", "image_id": record.image_id,
            "closed_types": closed_types, "open_kinds": open_kinds}),
        request_id=f"{record.image_id}/questions/{attempt}",
    )
    response = complete_vision(registry.get(provider_name), prompt, _NO_RETRY)
    return _parse_questions(response.text, record.image_id, closed_types, open_kinds)


def _parse_questions(text: str, image_id: str, closed_types: list[str],
                     open_kinds: list[str]) -> list[QaItem]:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaParseFailure(f"question payload is not JSON: {exc}") from exc
    if not isinstance(raw, list) or len(raw) != REQUIRED_QUESTIONS:
        raise SchemaParseFailure(
            f"expected {REQUIRED_QUESTIONS} questions, got "
            f"{len(raw) if isinstance(raw, list) else type(raw).__name__}")
    items: list[QaItem] = []
    try:
        for i, entry in enumerate(raw):
            mode = AnswerMode(entry["answer_mode"])
            closed_type = ClosedType(entry["closed_type"]) if entry.get("closed_type") else None
            items.append(QaItem(
                question_id=f"{image_id}_q{i + 1}",
                question_text=entry["question"],
                answer_mode=mode,
                closed_type=closed_type,
                difficulty=Difficulty(entry["difficulty"]),
                expected_answer_type=ExpectedAnswerType(entry["expected_answer_type"]),
            ))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaParseFailure(f"question entry malformed: {exc}") from exc
    got_closed = sum(1 for q in items if q.answer_mode is AnswerMode.CLOSED)
    if got_closed != len(closed_types):
        raise SchemaParseFailure(
            f"plan asked for {len(closed_types)} closed questions, got {got_closed}")
    return items


def generate_answers(record: ImageRecord, item: QaItem, cfg: PipelineConfig,
                     registry: ProviderRegistry, prompts: PromptLibrary,
                     attempt: int = 1) -> list[Answer]:
    """Ten answers: one five-answer pass through each of the first two pool
    providers (the aggregation trick that replaces ten annotators)."""
    if item.answers:
        raise AgentError(f"{item.question_id} already has answers")
    pool = (cfg.providers[0], cfg.providers[1 % len(cfg.providers)])
    answers: list[Answer] = []
    for slot, provider_name in enumerate(pool):
        batch = _answer_batch(record, item, cfg, registry, prompts, provider_name,
                              slot, attempt)
        answers.extend(batch)
    return [
        Answer(answer_id=i + 1, text=a["answer"],
               confidence=AnswerConfidence(a["confidence"]),
               answer_type=str(a["answer_type"]), generator_model=a["model"])
        for i, a in enumerate(answers)
    ]


def _answer_batch(record: ImageRecord, item: QaItem, cfg: PipelineConfig,
                  registry: ProviderRegistry, prompts: PromptLibrary,
                  provider_name: str, slot: int, attempt: int) -> list[dict]:
    collected: list[dict] = []
    fills = 0
    while len(collected) < ANSWERS_PER_BATCH:
        need = ANSWERS_PER_BATCH - len(collected)
        suffix = f"/fill{fills}" if fills else ""
        prompt = VisionPrompt(
            system_text="You are the answer generation agent in a driving-scene dataset pipeline.",
            user_text=prompts.render("answer", count=need, question=item.question_text),
            image_path=record.file_path,
            temperature=cfg.agent_temperatures[Stage.ANSWER],
            response_schema_hint=json.dumps({
                "kind": "answers", "stage": "answer", "image_id": record.image_id,
                "question": item.question_text,
                "closed_type": item.closed_type.value if item.closed_type else None,
                "expected_answer_type": item.expected_answer_type.value,
                "count": need}),
            request_id=f"{record.image_id}/{item.question_id}/answers/{attempt}/p{slot}{suffix}",
        )
        response = complete_vision(registry.get(provider_name), prompt, _NO_RETRY)
        batch = _parse_answers(response.text)
        for entry in batch[:need]:
            entry["model"] = response.model
            collected.append(entry)
        if len(collected) < ANSWERS_PER_BATCH:
            fills += 1
            if fills > _MAX_BATCH_REFILLS:
                raise ShortBatch(
                    f"{provider_name} returned {len(collected)}/{ANSWERS_PER_BATCH} answers "
                    f"for {item.question_id} after {fills} passes")
    return collected


def _parse_answers(text: str) -> list[dict]:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaParseFailure(f"answer payload is not JSON: {exc}") from exc
    if not isinstance(raw, list):
        raise SchemaParseFailure("answer payload is not a list")
    out = []
    for entry in raw:
        try:
            AnswerConfidence(entry["confidence"])
            out.append({"answer": str(entry["answer"]),
                        "confidence": entry["confidence"],
                        "answer_type": entry["answer_type"]})
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaParseFailure(f"answer entry malformed: {exc}") from exc
    return out


def validate(stage: Stage, artifact, record: ImageRecord, cfg: PipelineConfig,
             registry: ProviderRegistry, prompts: PromptLibrary,
             attempt: int = 1, question_id: Optional[str] = None) -> Verdict:
    """Run the validation agent on one stage artifact.

    The validation provider is configured separately from the generators, so
    the verdict is always independently invoked.
    """
    rendered = _render_artifact(stage, artifact)
    rid = (f"{record.image_id}/{question_id}/answers/{attempt}/validate"
           if question_id else f"{record.image_id}/{stage.value}/{attempt}/validate")
    prompt = VisionPrompt(
        system_text="You are the validation agent in a driving-scene dataset pipeline.",
        user_text=prompts.render("validation", stage=stage.value, artifact=rendered),
        image_path=record.file_path,
        temperature=0.0,
        response_schema_hint=json.dumps({"kind": "verdict", "stage": stage.value,
                                         "image_id": record.image_id}),
        request_id=rid,
    )
    response = complete_vision(registry.get(cfg.validation_provider), prompt, _NO_RETRY)
    try:
        payload = json.loads(response.text)
        passed = bool(payload["pass"])
        reason = str(payload.get("reason", ""))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise SchemaParseFailure(f"verdict payload malformed: {exc}") from exc
    if not passed and not reason:
        reason = "validator rejected the artifact without a stated reason"
    return Verdict(passed=passed, mechanism=_MECHANISM_BY_STAGE[stage], reason=reason)


def _render_artifact(stage: Stage, artifact) -> str:
    if stage is Stage.CAPTION:
        return artifact.text if isinstance(artifact, Caption) else str(artifact)
    if stage is Stage.QUESTION:
        return "\n".join(f"{i + 1}. {q.question_text}" for i, q in enumerate(artifact))
    item: QaItem = artifact
    answers = "\n".join(f"  {a.answer_id}. {a.text}" for a in item.answers)
    return f"Q: {item.question_text}\n{answers}"


def run_generation(record: ImageRecord, cfg: PipelineConfig, registry: ProviderRegistry,
                   prompts: PromptLibrary, image_seq: int = 0) -> ImageRecord:
    """Drive one image through caption -> questions -> answers with
    per-stage validation and regeneration.

    Exhausting a stage's attempt budget marks the record failed at that stage;
    nothing is ever silently passed through.
    """
    verdicts: list[VerdictEntry] = []
    answer_attempts: dict[str, int] = {}

    def fail(stage: Stage, caption_attempts: int, question_attempts: int,
             question_id: Optional[str] = None, caption: Optional[Caption] = None,
             qa_items: Sequence[QaItem] = ()) -> ImageRecord:
        trace = GenerationTrace(caption_attempts=caption_attempts,
                                question_attempts=question_attempts,
                                answer_attempts=dict(answer_attempts),
                                verdicts=tuple(verdicts))
        return ImageRecord(
            image_id=record.image_id, file_path=record.file_path, caption=caption,
            qa_items=tuple(qa_items), detections=record.detections, trace=trace,
            split=record.split, status=RecordStatus.FAILED,
            failure=StageFailure(stage=stage, question_id=question_id))

    # Caption stage: fixed once passed, even if later stages regenerate.
    caption: Optional[Caption] = None
    caption_attempts = 0
    for attempt in range(1, cfg.max_attempts[Stage.CAPTION] + 1):
        caption_attempts = attempt
        candidate = generate_caption(record, cfg, registry, prompts, image_seq, attempt)
        verdict = validate(Stage.CAPTION, candidate, record, cfg, registry, prompts, attempt)
        verdicts.append(VerdictEntry(Stage.CAPTION, attempt,
                                     VerdictOutcome.PASS if verdict.passed else VerdictOutcome.FAIL,
                                     verdict.reason))
        if verdict.passed:
            caption = candidate
            break
    if caption is None:
        return fail(Stage.CAPTION, caption_attempts, 0)

    questions: Optional[list[QaItem]] = None
    question_attempts = 0
    for attempt in range(1, cfg.max_attempts[Stage.QUESTION] + 1):
        question_attempts = attempt
        try:
            candidate_qs = generate_questions(record, caption, cfg, registry, prompts,
                                              image_seq, attempt)
        except SchemaParseFailure as exc:
            verdicts.append(VerdictEntry(Stage.QUESTION, attempt, VerdictOutcome.FAIL,
                                         f"schema parse failure: {exc}"))
            continue
        verdict = validate(Stage.QUESTION, candidate_qs, record, cfg, registry, prompts, attempt)
        verdicts.append(VerdictEntry(Stage.QUESTION, attempt,
                                     VerdictOutcome.PASS if verdict.passed else VerdictOutcome.FAIL,
                                     verdict.reason))
        if verdict.passed:
            questions = candidate_qs
            break
    if questions is None:
        return fail(Stage.QUESTION, caption_attempts, question_attempts, caption=caption)

    answered: list[QaItem] = []
    for item in questions:
        done: Optional[QaItem] = None
        for attempt in range(1, cfg.max_attempts[Stage.ANSWER] + 1):
            answer_attempts[item.question_id] = attempt
            try:
                answers = generate_answers(record, item, cfg, registry, prompts, attempt)
            except (ShortBatch, SchemaParseFailure) as exc:
                verdicts.append(VerdictEntry(Stage.ANSWER, attempt, VerdictOutcome.FAIL,
                                             f"generation fault: {exc}"))
                continue
            candidate_item = item.with_answers(answers)
            verdict = validate(Stage.ANSWER, candidate_item, record, cfg, registry, prompts,
                               attempt, question_id=item.question_id)
            verdicts.append(VerdictEntry(Stage.ANSWER, attempt,
                                         VerdictOutcome.PASS if verdict.passed
                                         else VerdictOutcome.FAIL,
                                         verdict.reason))
            if verdict.passed:
                done = candidate_item
                break
        if done is None:
            return fail(Stage.ANSWER, caption_attempts, question_attempts,
                        question_id=item.question_id, caption=caption, qa_items=answered)
        answered.append(done)

    trace = GenerationTrace(caption_attempts=caption_attempts,
                            question_attempts=question_attempts,
                            answer_attempts=dict(answer_attempts),
                            verdicts=tuple(verdicts))
    return ImageRecord(
        image_id=record.image_id, file_path=record.file_path, caption=caption,
        qa_items=tuple(answered), detections=record.detections, trace=trace,
        split=record.split, status=RecordStatus.COMPLETE)


def run_pipeline(records: Sequence[ImageRecord], cfg: PipelineConfig,
                 registry: ProviderRegistry, prompts: PromptLibrary,
                 records_dir: Optional[Path] = None) -> list[ImageRecord]:
    """Process images concurrently up to cfg.parallelism.

    Output order matches input order and, with the simulated provider, output
    content is independent of scheduling (per-request RNG partitioning).
    Record writes go through a single lock.
    """
    from .records import save_record

    write_lock = threading.Lock()
    results: list[Optional[ImageRecord]] = [None] * len(records)

    def work(idx: int) -> None:
        out = run_generation(records[idx], cfg, registry, prompts, image_seq=idx)
        if records_dir is not None:
            with write_lock:
                save_record(out, records_dir)
        results[idx] = out

    if cfg.parallelism == 1:
        for i in range(len(records)):
            work(i)
    else:
        with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
            list(pool.map(work, range(len(records))))
    return [r for r in results if r is not None]


def consistency_probe(item: QaItem, record: ImageRecord, trials: int, cfg: PipelineConfig,
                      registry: ProviderRegistry, prompts: PromptLibrary) -> ConsistencyReport:
    """Ask the same closed-ended question `trials` times and look for
    fact-conflicting answers (hallucination flag)."""
    if item.answer_mode is not AnswerMode.CLOSED:
        raise ValueError("consistency probes apply to closed-ended items only")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    provider = registry.get(cfg.providers[0])
    normalized: list[str] = []
    for trial in range(1, trials + 1):
        prompt = VisionPrompt(
            system_text="Answer concisely based on the attached image.",
            user_text=prompts.render("probe", question=item.question_text),
            image_path=record.file_path,
            temperature=cfg.agent_temperatures[Stage.ANSWER],
            response_schema_hint=json.dumps({
                "kind": "probe", "stage": "answer", "image_id": record.image_id,
                "question": item.question_text,
                "closed_type": item.closed_type.value if item.closed_type else None}),
            request_id=f"{record.image_id}/{item.question_id}/probe/{trial}",
        )
        response = complete_vision(provider, prompt, _NO_RETRY)
        normalized.append(normalize_answer(response.text))
    affirmative = sum(1 for n in normalized if n == "yes")
    counts: dict[str, int] = {}
    for n in normalized:
        counts[n] = counts.get(n, 0) + 1
    top = max(counts.values())
    majority = min(k for k, v in counts.items() if v == top)
    return ConsistencyReport(
        question_id=item.question_id, trials=trials, affirmative_count=affirmative,
        consistent=len(counts) == 1, majority_answer=majority)


__all__ = [
    "AgentError", "EmptyCompletion", "SchemaParseFailure", "ShortBatch", "StageExhausted",
    "Mechanism", "Verdict", "ConsistencyReport", "PromptLibrary", "OPEN_KINDS",
    "draw_question_plan", "generate_caption", "generate_questions", "generate_answers",
    "validate", "run_generation", "run_pipeline", "consistency_probe",
]
