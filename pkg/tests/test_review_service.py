from __future__ import annotations

import json
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor

import pytest
from fastapi.testclient import TestClient

from foundry.records import load_record, save_record
from foundry.review import ReviewStore, create_app, review_population

from conftest import build_complete_record


def _png_bytes() -> bytes:
    def chunk(typ: bytes, data: bytes) -> bytes:
        return (struct.pack(">I", len(data)) + typ + data
                + struct.pack(">I", zlib.crc32(typ + data)))
    ihdr = struct.pack(">IIBBBBB", 1, 1, 8, 2, 0, 0, 0)
    return (b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr)
            + chunk(b"IDAT", zlib.compress(b"\x00\xff\x00\x00")) + chunk(b"IEND", b""))


@pytest.fixture
def review_env(tmp_path):
    records_dir = tmp_path / "records"
    image = tmp_path / "scene.png"
    image.write_bytes(_png_bytes())
    records = []
    for i in range(4):
        record = build_complete_record(image_id=f"img{i:03d}")
        record = type(record)(**{**record.__dict__, "file_path": str(image)})
        save_record(record, records_dir)
        records.append(record)
    store = ReviewStore(tmp_path / "review", records_dir)
    client = TestClient(create_app(store))
    return store, client, records, records_dir


def _session(client, item_ids):
    response = client.post("/sessions", json={"item_ids": item_ids})
    assert response.status_code == 200, response.text
    return response.json()["session_id"]


def _verdict(client, sid, item_id, decision, edited_text=None, reviewer="r1"):
    body = {"item_id": item_id, "item_kind": item_id.split(":")[0],
            "decision": decision, "reviewer_id": reviewer}
    if edited_text is not None:
        body["edited_text"] = edited_text
    return client.post(f"/sessions/{sid}/verdicts", json=body)


def test_session_lifecycle(review_env):
    store, client, records, _ = review_env
    items = review_population(records)[:10]
    sid = _session(client, items)

    batch = client.get(f"/sessions/{sid}/batch", params={"n": 20}).json()
    assert len(batch["items"]) == 10
    assert batch["pending"] == 10
    assert batch["items"][0]["item_id"] == items[0]
    assert batch["items"][0]["image_url"].endswith("/image")

    stats = client.get(f"/sessions/{sid}/stats").json()
    assert stats["reviewed"] == 0

    for item in items[:4]:
        assert _verdict(client, sid, item, "accept").status_code == 200
    assert client.get(f"/sessions/{sid}/batch").json()["pending"] == 6


def test_batch_is_stable_without_verdicts(review_env):
    _, client, records, _ = review_env
    sid = _session(client, review_population(records)[:6])
    first = client.get(f"/sessions/{sid}/batch", params={"n": 3}).json()["items"]
    second = client.get(f"/sessions/{sid}/batch", params={"n": 3}).json()["items"]
    assert [i["item_id"] for i in first] == [i["item_id"] for i in second]


def test_batch_n_zero_and_tail(review_env):
    _, client, records, _ = review_env
    sid = _session(client, review_population(records)[:3])
    assert client.get(f"/sessions/{sid}/batch", params={"n": 0}).json()["items"] == []
    assert len(client.get(f"/sessions/{sid}/batch", params={"n": 5}).json()["items"]) == 3


def test_duplicate_verdict_conflict(review_env):
    _, client, records, _ = review_env
    items = review_population(records)[:3]
    sid = _session(client, items)
    assert _verdict(client, sid, items[0], "accept").status_code == 200
    assert _verdict(client, sid, items[0], "reject").status_code == 409


def test_unknown_item_rejected(review_env):
    _, client, records, _ = review_env
    sid = _session(client, review_population(records)[:3])
    response = _verdict(client, sid, "question:ghost_q1", "accept")
    assert response.status_code == 400


def test_session_with_missing_items_fails(review_env):
    _, client, _, _ = review_env
    response = client.post("/sessions", json={"item_ids": ["caption:nope"]})
    assert response.status_code == 400


def test_edit_requires_text(review_env):
    _, client, records, _ = review_env
    items = review_population(records)[:3]
    sid = _session(client, items)
    assert _verdict(client, sid, items[0], "edit").status_code == 422
    assert _verdict(client, sid, items[0], "accept", edited_text="x").status_code == 422


def test_error_rate_and_stats(review_env):
    _, client, records, _ = review_env
    items = review_population(records)[:10]
    response = client.post("/sessions", json={"item_ids": items, "population_size": 120})
    sid = response.json()["session_id"]
    for item in items[:8]:
        _verdict(client, sid, item, "accept")
    _verdict(client, sid, items[8], "reject")
    stats = _verdict(client, sid, items[9], "edit", edited_text="better text").json()
    assert stats["reviewed"] == 10
    assert stats["accepted"] == 8
    assert stats["rejected"] == 1
    assert stats["edited"] == 1
    assert stats["error_rate_estimate"] == pytest.approx(0.2)
    assert stats["margin_at_confidence"] > 0


def test_closed_session_batch_is_gone(review_env):
    _, client, records, _ = review_env
    items = review_population(records)[:2]
    sid = _session(client, items)
    for item in items:
        _verdict(client, sid, item, "accept")
    assert client.get(f"/sessions/{sid}/batch").status_code == 410


def test_reject_enqueues_exactly_once_across_sessions(review_env):
    store, client, records, _ = review_env
    item = review_population(records)[1]
    for _ in range(2):
        sid = _session(client, [item])
        response = _verdict(client, sid, item, "reject")
        assert response.status_code == 200
    queue = store.regeneration_queue()
    assert [entry["item_id"] for entry in queue] == [item]
    assert queue[0]["image_id"] == records[0].image_id


def test_reject_action_remove_skips_queue(tmp_path, review_env):
    _, _, records, records_dir = review_env
    store = ReviewStore(tmp_path / "review2", records_dir, reject_action="remove")
    client = TestClient(create_app(store))
    item = review_population(records)[0]
    sid = _session(client, [item])
    assert _verdict(client, sid, item, "reject").status_code == 200
    assert store.regeneration_queue() == []


def test_edit_updates_record_and_logs_provenance(review_env):
    store, client, records, records_dir = review_env
    record = records[0]
    caption_item = f"caption:{record.image_id}"
    question_item = f"question:{record.qa_items[0].question_id}"
    sid = _session(client, [caption_item, question_item])
    _verdict(client, sid, caption_item, "edit", edited_text="a corrected caption text")
    _verdict(client, sid, question_item, "edit", edited_text="How many trucks are there?")
    updated = load_record(records_dir / f"{record.image_id}.json")
    assert updated.caption.text == "a corrected caption text"
    assert updated.caption.word_count == 4
    assert updated.qa_items[0].question_text == "How many trucks are there?"
    notes = [json.loads(line) for line in
             (store.root / "edits.jsonl").read_text().splitlines()]
    assert {n["item_id"] for n in notes} == {caption_item, question_item}


def test_log_replay_reproduces_stats(review_env):
    store, client, records, _ = review_env
    items = review_population(records)[:6]
    sid = _session(client, items)
    decisions = ["accept", "accept", "reject", "accept", "edit", "accept"]
    for item, decision in zip(items, decisions):
        _verdict(client, sid, item, decision,
                 edited_text="fixed" if decision == "edit" else None)
    log_lines = (store.root / "sessions" / sid / "log.jsonl").read_text().splitlines()
    replayed = store.stats_from_log(sid, [json.loads(line) for line in log_lines])
    assert replayed == store.stats(sid)
    assert replayed.reviewed == 6


def test_image_route_serves_png(review_env):
    _, client, records, _ = review_env
    response = client.get(f"/items/caption:{records[0].image_id}/image")
    assert response.status_code == 200
    assert response.headers["content-type"] == "image/png"
    assert response.content.startswith(b"\x89PNG")


def test_image_route_unknown_item(review_env):
    _, client, _, _ = review_env
    assert client.get("/items/caption:ghost/image").status_code == 404


def test_concurrent_distinct_verdicts_all_land(review_env):
    _, client, records, _ = review_env
    items = review_population(records)[:8]
    sid = _session(client, items)
    with ThreadPoolExecutor(max_workers=8) as pool:
        codes = list(pool.map(
            lambda item: _verdict(client, sid, item, "accept").status_code, items))
    assert codes == [200] * 8
    assert client.get(f"/sessions/{sid}/stats").json()["reviewed"] == 8


def test_unknown_session_404(review_env):
    _, client, _, _ = review_env
    assert client.get("/sessions/none/stats").status_code == 404


def test_static_ui_mount(tmp_path, review_env):
    store, _, _, records_dir = review_env
    ui = tmp_path / "dist"
    ui.mkdir()
    (ui / "index.html").write_text("<!doctype html><title>review</title>")
    client = TestClient(create_app(ReviewStore(tmp_path / "r2", records_dir),
                                   static_dir=ui))
    response = client.get("/")
    assert response.status_code == 200
    assert "review" in response.text
    # API routes still win over the static mount
    assert client.get("/sessions/none/stats").status_code == 404
