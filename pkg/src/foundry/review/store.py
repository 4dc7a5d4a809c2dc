"""Review session persistence: append-only verdict logs, derived stats, and
the regeneration queue fed by rejected items.

Everything lives in flat files under one root so a session can be replayed
from its log alone:

    <root>/sessions/<session_id>/session.json   session metadata + item order
    <root>/sessions/<session_id>/log.jsonl      one verdict per line, append-only
    <root>/regeneration_queue.jsonl             rejected items, deduplicated
    <root>/edits.jsonl                          provenance notes for edits
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Optional

from ..dataset_io import ReviewSample, margin_at_confidence
from ..records import (
    Caption,
    ImageRecord,
    load_record,
    save_record,
)


class UnknownItems(Exception):
    pass


class AlreadyReviewed(Exception):
    pass


class SessionClosed(Exception):
    pass


class UnknownSession(Exception):
    pass


class Decision(str, Enum):
    ACCEPT = "accept"
    REJECT = "reject"
    EDIT = "edit"


class ItemKind(str, Enum):
    CAPTION = "caption"
    QUESTION = "question"
    ANSWER = "answer"


@dataclass(frozen=True)
class ReviewVerdict:
    item_id: str
    item_kind: ItemKind
    decision: Decision
    reviewer_id: str
    edited_text: Optional[str] = None
    timestamp: Optional[float] = None

    def __post_init__(self) -> None:
        if (self.decision is Decision.EDIT) != (self.edited_text is not None):
            raise ValueError("edited_text is required iff decision is edit")


@dataclass(frozen=True)
class ReviewSessionStats:
    reviewed: int
    accepted: int
    rejected: int
    edited: int
    error_rate_estimate: float
    margin_at_confidence: float

    def to_dict(self) -> dict:
        return {
            "reviewed": self.reviewed,
            "accepted": self.accepted,
            "rejected": self.rejected,
            "edited": self.edited,
            "error_rate_estimate": self.error_rate_estimate,
            "margin_at_confidence": self.margin_at_confidence,
        }


def review_population(records: list[ImageRecord]) -> list[str]:
    """Reviewable item ids: one caption item per image, one per question."""
    out = []
    for r in records:
        out.append(f"caption:{r.image_id}")
        for q in r.qa_items:
            out.append(f"question:{q.question_id}")
    return out


def item_kind_for(item_id: str) -> ItemKind:
    prefix = item_id.split(":", 1)[0]
    return ItemKind(prefix)


class ReviewStore:
    """Single-writer review persistence over a records directory.

    ``reject_action`` chooses whether rejected items are queued for
    regeneration (default) or only logged for removal downstream.
    """

    def __init__(self, root: Path, records_dir: Path, reject_action: str = "regenerate"):
        if reject_action not in ("regenerate", "remove"):
            raise ValueError("reject_action must be 'regenerate' or 'remove'")
        self.root = Path(root)
        self.records_dir = Path(records_dir)
        self.reject_action = reject_action
        self._lock = threading.Lock()
        (self.root / "sessions").mkdir(parents=True, exist_ok=True)

    # -- record lookup -------------------------------------------------------

    def _question_index(self) -> dict[str, str]:
        index = {}
        for path in sorted(self.records_dir.glob("*.json")):
            record = load_record(path)
            for q in record.qa_items:
                index[q.question_id] = record.image_id
        return index

    def resolve_image_id(self, item_id: str) -> Optional[str]:
        kind = item_id.split(":", 1)[0]
        if kind == "caption":
            image_id = item_id.split(":", 1)[1]
            return image_id if (self.records_dir / f"{image_id}.json").exists() else None
        qid = item_id.split(":")[1]
        return self._question_index().get(qid)

    def _load(self, image_id: str) -> ImageRecord:
        return load_record(self.records_dir / f"{image_id}.json")

    def item_context(self, item_id: str) -> dict:
        """Everything a reviewer needs to judge one item."""
        image_id = self.resolve_image_id(item_id)
        if image_id is None:
            raise UnknownItems(f"item {item_id!r} not found in record store")
        record = self._load(image_id)
        context = {
            "item_id": item_id,
            "item_kind": item_kind_for(item_id).value,
            "image_id": image_id,
            "image_path": record.file_path,
            "image_url": f"/items/{item_id}/image",
            "caption": record.caption.text if record.caption else None,
        }
        if context["item_kind"] in ("question", "answer"):
            qid = item_id.split(":")[1]
            item = next(q for q in record.qa_items if q.question_id == qid)
            context["question"] = item.question_text
            context["answers"] = [a.text for a in item.answers]
        return context

    # -- session lifecycle -----------------------------------------------------

    def start_session(self, sample: ReviewSample) -> str:
        """Create a resumable session over the sample's items, sample order."""
        missing = [i for i in sample.item_ids if self.resolve_image_id(i) is None]
        if missing:
            raise UnknownItems(f"{len(missing)} sample items missing from store: {missing[:5]}")
        session_id = uuid.uuid4().hex[:12]
        session_dir = self.root / "sessions" / session_id
        session_dir.mkdir(parents=True)
        (session_dir / "session.json").write_text(json.dumps({
            "session_id": session_id,
            "item_ids": list(sample.item_ids),
            "population_size": sample.population_size,
            "confidence": sample.confidence,
            "margin": sample.margin,
            "assumed_proportion": sample.assumed_proportion,
            "sample_size": sample.sample_size,
            "created": time.time(),
        }, indent=2))
        (session_dir / "log.jsonl").touch()
        return session_id

    def _session_meta(self, session_id: str) -> dict:
        path = self.root / "sessions" / session_id / "session.json"
        if not path.exists():
            raise UnknownSession(f"no session {session_id!r}")
        return json.loads(path.read_text())

    def _log_path(self, session_id: str) -> Path:
        return self.root / "sessions" / session_id / "log.jsonl"

    def _read_log(self, session_id: str) -> list[dict]:
        path = self._log_path(session_id)
        if not path.exists():
            raise UnknownSession(f"no session {session_id!r}")
        return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]

    def pending_items(self, session_id: str) -> list[str]:
        meta = self._session_meta(session_id)
        reviewed = {entry["item_id"] for entry in self._read_log(session_id)}
        return [i for i in meta["item_ids"] if i not in reviewed]

    def get_batch(self, session_id: str, n: int) -> list[dict]:
        """Next <= n pending items in stable sample order, with context."""
        pending = self.pending_items(session_id)
        if not pending and self._session_meta(session_id)["item_ids"]:
            raise SessionClosed(f"session {session_id} has no pending items")
        return [self.item_context(item_id) for item_id in pending[:max(0, n)]]

    def post_verdict(self, session_id: str, verdict: ReviewVerdict) -> ReviewSessionStats:
        """Persist one verdict and apply its side effect (regen queue / edit)."""
        with self._lock:
            meta = self._session_meta(session_id)
            if verdict.item_id not in meta["item_ids"]:
                raise UnknownItems(f"item {verdict.item_id!r} is not part of this session")
            log = self._read_log(session_id)
            reviewed_ids = {entry["item_id"] for entry in log}
            if verdict.item_id in reviewed_ids:
                raise AlreadyReviewed(f"item {verdict.item_id!r} already has a verdict")
            stamped = verdict if verdict.timestamp is not None else \
                replace(verdict, timestamp=time.time())
            entry = {
                "item_id": stamped.item_id,
                "item_kind": stamped.item_kind.value,
                "decision": stamped.decision.value,
                "edited_text": stamped.edited_text,
                "reviewer_id": stamped.reviewer_id,
                "timestamp": stamped.timestamp,
            }
            with open(self._log_path(session_id), "a") as fh:
                fh.write(json.dumps(entry) + "\n")
            if stamped.decision is Decision.REJECT and self.reject_action == "regenerate":
                self._enqueue_regeneration(stamped.item_id)
            elif stamped.decision is Decision.EDIT:
                self._apply_edit(stamped)
            return self.stats(session_id)

    # -- side effects ----------------------------------------------------------

    def regeneration_queue(self) -> list[dict]:
        path = self.root / "regeneration_queue.jsonl"
        if not path.exists():
            return []
        return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]

    def _enqueue_regeneration(self, item_id: str) -> None:
        if any(entry["item_id"] == item_id for entry in self.regeneration_queue()):
            return
        image_id = self.resolve_image_id(item_id)
        entry = {"item_id": item_id, "image_id": image_id,
                 "stage": item_kind_for(item_id).value}
        with open(self.root / "regeneration_queue.jsonl", "a") as fh:
            fh.write(json.dumps(entry) + "\n")

    def _apply_edit(self, verdict: ReviewVerdict) -> None:
        image_id = self.resolve_image_id(verdict.item_id)
        record = self._load(image_id)
        kind = item_kind_for(verdict.item_id)
        if kind is ItemKind.CAPTION:
            new_caption = Caption.from_text(verdict.edited_text,
                                            record.caption.generator_model if record.caption else "human",
                                            record.caption.temperature if record.caption else 0.0)
            record = replace(record, caption=new_caption)
        elif kind is ItemKind.QUESTION:
            qid = verdict.item_id.split(":")[1]
            items = tuple(
                replace(q, question_text=verdict.edited_text) if q.question_id == qid else q
                for q in record.qa_items)
            record = replace(record, qa_items=items)
        else:
            qid, aid = verdict.item_id.split(":")[1:3]
            items = []
            for q in record.qa_items:
                if q.question_id != qid:
                    items.append(q)
                    continue
                answers = tuple(
                    replace(a, text=verdict.edited_text) if a.answer_id == int(aid) else a
                    for a in q.answers)
                items.append(replace(q, answers=()).with_answers(answers))
            record = replace(record, qa_items=tuple(items))
        save_record(record, self.records_dir)
        with open(self.root / "edits.jsonl", "a") as fh:
            fh.write(json.dumps({
                "item_id": verdict.item_id, "reviewer_id": verdict.reviewer_id,
                "edited_text": verdict.edited_text, "timestamp": verdict.timestamp,
                "note": "text replaced by human review",
            }) + "\n")

    # -- statistics --------------------------------------------------------------

    def stats(self, session_id: str) -> ReviewSessionStats:
        return self.stats_from_log(session_id, self._read_log(session_id))

    def stats_from_log(self, session_id: str, log: list[dict]) -> ReviewSessionStats:
        """Stats are a pure fold over the verdict log: replaying the log from
        empty reproduces them exactly."""
        meta = self._session_meta(session_id)
        counts = {"accept": 0, "reject": 0, "edit": 0}
        for entry in log:
            counts[entry["decision"]] += 1
        reviewed = sum(counts.values())
        errors = counts["reject"] + counts["edit"]
        return ReviewSessionStats(
            reviewed=reviewed,
            accepted=counts["accept"],
            rejected=counts["reject"],
            edited=counts["edit"],
            error_rate_estimate=errors / reviewed if reviewed else 0.0,
            margin_at_confidence=margin_at_confidence(
                meta["sample_size"], meta["population_size"], meta["confidence"],
                meta["assumed_proportion"]),
        )
