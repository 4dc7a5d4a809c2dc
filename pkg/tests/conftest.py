from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from foundry.agents import PromptLibrary
from foundry.providers import ProviderRegistry, SimulatedProvider, SimulatedProviderScript, StageBehavior
from foundry.records import (
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
    Split,
    Stage,
    VerdictEntry,
    VerdictOutcome,
)

PASS_ALL = {
    "caption": StageBehavior(validation_pass_probability=1.0),
    "question": StageBehavior(validation_pass_probability=1.0),
    "answer": StageBehavior(validation_pass_probability=1.0),
}


def sim_registry(seed: int = 42, behaviors: dict | None = None,
                 overrides: dict | None = None,
                 names: tuple[str, ...] = ("sim-a", "sim-b", "sim-v")) -> ProviderRegistry:
    """Registry of simulated providers sharing one script."""
    registry = ProviderRegistry()
    for i, name in enumerate(names):
        script = SimulatedProviderScript(
            seed=seed + i,
            stage_behaviors=behaviors if behaviors is not None else PASS_ALL,
            overrides=overrides or {},
        )
        registry.register(SimulatedProvider(name, script))
    return registry


def pipeline_config(seed: int = 42, max_attempts: int = 5, parallelism: int = 1,
                    providers: tuple[str, ...] = ("sim-a", "sim-b"),
                    validation_provider: str = "sim-v") -> PipelineConfig:
    return PipelineConfig(
        providers=providers,
        validation_provider=validation_provider,
        max_attempts={s: max_attempts for s in Stage},
        parallelism=parallelism,
        seed=seed,
    )


@pytest.fixture
def prompts() -> PromptLibrary:
    return PromptLibrary()


def build_complete_record(image_id: str = "img001", n_closed: int = 2,
                          difficulties: list[str] | None = None,
                          split: Split = Split.UNASSIGNED,
                          caption_attempts: int = 1, question_attempts: int = 1,
                          answer_attempts: int = 1) -> ImageRecord:
    """Hand-built structurally valid complete record for format/stats tests."""
    closed_types = [ClosedType.COUNTING, ClosedType.EXISTENCE, ClosedType.KEY_OBJECT][:n_closed]
    difficulties = difficulties or ["easy", "easy", "medium", "medium", "hard"]
    items = []
    for i in range(5):
        closed = i < n_closed
        if closed:
            ctype = closed_types[i]
            text = ("How many vehicles are there?" if ctype is ClosedType.COUNTING
                    else "Does an object of class pedestrian exist in the image?"
                    if ctype is ClosedType.EXISTENCE else "Is this truck a key object?")
            expected = (ExpectedAnswerType.COUNT if ctype is ClosedType.COUNTING
                        else ExpectedAnswerType.YES_NO_MULTIPLE_CHOICE)
            answer_text = "4" if ctype is ClosedType.COUNTING else "yes"
        else:
            ctype = None
            text = "What perception-related SOTIF risks are evident in this image?"
            expected = ExpectedAnswerType.ANALYSIS
            answer_text = "glare from the wet road reduces lane-marking contrast"
        answers = tuple(
            Answer(answer_id=j + 1, text=answer_text,
                   confidence=AnswerConfidence.YES, answer_type="fixture",
                   generator_model="sim-a" if j < 5 else "sim-b")
            for j in range(10)
        )
        item = QaItem(
            question_id=f"{image_id}_q{i + 1}", question_text=text,
            answer_mode=AnswerMode.CLOSED if closed else AnswerMode.OPEN,
            closed_type=ctype, difficulty=Difficulty(difficulties[i]),
            expected_answer_type=expected,
        ).with_answers(answers)
        items.append(item)
    verdicts = []
    for a in range(1, caption_attempts + 1):
        outcome = VerdictOutcome.PASS if a == caption_attempts else VerdictOutcome.FAIL
        verdicts.append(VerdictEntry(Stage.CAPTION, a, outcome,
                                     "" if outcome is VerdictOutcome.PASS else "retry"))
    for a in range(1, question_attempts + 1):
        outcome = VerdictOutcome.PASS if a == question_attempts else VerdictOutcome.FAIL
        verdicts.append(VerdictEntry(Stage.QUESTION, a, outcome,
                                     "" if outcome is VerdictOutcome.PASS else "retry"))
    answer_map = {}
    for item in items:
        answer_map[item.question_id] = answer_attempts
        for a in range(1, answer_attempts + 1):
            outcome = VerdictOutcome.PASS if a == answer_attempts else VerdictOutcome.FAIL
            verdicts.append(VerdictEntry(Stage.ANSWER, a, outcome,
                                         "" if outcome is VerdictOutcome.PASS else "retry"))
    caption = Caption.from_text(
        "A rain-soaked urban intersection with glare that hides crossing pedestrians "
        "from camera-based perception.", "sim-a", 0.8)
    return ImageRecord(
        image_id=image_id, file_path=f"/tmp/{image_id}.jpg", caption=caption,
        qa_items=tuple(items), trace=GenerationTrace(
            caption_attempts=caption_attempts, question_attempts=question_attempts,
            answer_attempts=answer_map, verdicts=tuple(verdicts)),
        split=split, status=RecordStatus.COMPLETE,
    )
