"""Spin up a review-service instance over a small generated corpus.

Prints one JSON line {"port": ..., "items": [...]} on stdout once the
fixture is built, then serves until killed.  Used by the frontend E2E test.
"""

from __future__ import annotations

import argparse
import json
import socket
import struct
import sys
import tempfile
import zlib
from pathlib import Path

import uvicorn

from foundry.agents import PromptLibrary, run_pipeline
from foundry.config import build_registry, default_config_dict, parse_config
from foundry.records import ImageRecord, RecordStatus, save_record
from foundry.review import ReviewStore, create_app, review_population


def _png() -> bytes:
    def chunk(typ: bytes, data: bytes) -> bytes:
        return (struct.pack(">I", len(data)) + typ + data
                + struct.pack(">I", zlib.crc32(typ + data)))
    ihdr = struct.pack(">IIBBBBB", 1, 1, 8, 2, 0, 0, 0)
    return (b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr)
            + chunk(b"IDAT", zlib.compress(b"\x00\xff\x00\x00")) + chunk(b"IEND", b""))


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--images", type=int, default=2)
    parser.add_argument("--port", type=int, default=0)
    args = parser.parse_args()

    root = Path(tempfile.mkdtemp(prefix="review_fixture_"))
    image_path = root / "scene.png"
    image_path.write_bytes(_png())

    cfg = parse_config(default_config_dict(seed=7))
    registry = build_registry(cfg)
    seeds = [ImageRecord(image_id=f"e2e{i:03d}", file_path=str(image_path))
             for i in range(args.images)]
    records_dir = root / "records"
    records = run_pipeline(seeds, cfg.pipeline, registry, PromptLibrary(),
                           records_dir=records_dir)
    complete = [r for r in records if r.status is RecordStatus.COMPLETE]
    items = [i for i in review_population(complete) if i.startswith("question:")]

    store = ReviewStore(root / "review", records_dir)
    app = create_app(store)

    port = args.port
    if port == 0:
        with socket.socket() as probe:
            probe.bind(("127.0.0.1", 0))
            port = probe.getsockname()[1]

    print(json.dumps({"port": port, "items": items, "root": str(root)}), flush=True)
    sys.stdout.flush()
    uvicorn.run(app, host="127.0.0.1", port=port, log_level="warning")


if __name__ == "__main__":
    main()
