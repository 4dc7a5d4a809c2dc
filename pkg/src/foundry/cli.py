"""Command-line entry point: one binary, subcommand per workflow step.

Logs go to stderr as line-delimited JSON; artifacts land in the files named
by each subcommand.  Failures exit nonzero with a machine-parsable
``error: <Kind>: <message>`` line on stderr.
"""

from __future__ import annotations

import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

import click

from . import dataset_io
from .agents import PromptLibrary, run_pipeline
from .config import ConfigInvalid, RootConfig, build_registry, default_config_dict, load_config, parse_config
from .evaluation import evaluate_records, load_predictions, save_report
from .gateway import (
    BackendModel,
    GatewayConfig,
    HttpBackend,
    run_continuous_bench,
    run_continuous_bench_realtime,
    run_sequential_bench,
    write_bench_csv,
    write_sweep_summary,
)
from .records import ImageRecord, RecordStatus, load_records
from .review import ReviewStore, create_app

log = logging.getLogger("foundry")

_IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp", ".webp"}


class _JsonLineFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        return json.dumps({
            "level": record.levelname.lower(),
            "logger": record.name,
            "message": record.getMessage(),
        })


def _setup_logging(verbose: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonLineFormatter())
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        handlers=[handler])


def _fail(exc: Exception) -> None:
    click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
    raise SystemExit(1)


def _load_cfg(config_path: Optional[str], seed: Optional[int]) -> RootConfig:
    if config_path:
        cfg = load_config(Path(config_path))
    else:
        cfg = parse_config(default_config_dict())
    if seed is not None:
        cfg.pipeline = replace(cfg.pipeline, seed=seed)
    return cfg


def _resolve_records_dir(path: Path) -> Path:
    nested = path / "records"
    return nested if nested.is_dir() else path


@click.group()
@click.option("--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool) -> None:
    """SOTIF dataset foundry: generation, packaging, review, evaluation,
    and gateway benchmarking."""
    _setup_logging(verbose)


@main.command()
@click.option("--images", "images_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="Override the pipeline seed.")
def generate(images_dir: str, config_path: Optional[str], out_dir: str,
             seed: Optional[int]) -> None:
    """Run the multi-agent pipeline over a directory of images."""
    try:
        cfg = _load_cfg(config_path, seed)
        registry = build_registry(cfg)
        prompts = PromptLibrary(cfg.prompts_dir)
        paths = sorted(p for p in Path(images_dir).iterdir()
                       if p.suffix.lower() in _IMAGE_SUFFIXES)
        if not paths:
            raise ConfigInvalid(f"no images found under {images_dir}")
        records = [ImageRecord(image_id=p.stem, file_path=str(p)) for p in paths]
        records_dir = Path(out_dir) / "records"
        results = run_pipeline(records, cfg.pipeline, registry, prompts,
                               records_dir=records_dir)
        complete = sum(1 for r in results if r.status is RecordStatus.COMPLETE)
        log.info("generated %d records (%d complete, %d failed) -> %s",
                 len(results), complete, len(results) - complete, records_dir)
        click.echo(str(records_dir))
    except Exception as exc:  # noqa: BLE001 - single CLI error funnel
        _fail(exc)


@main.command()
@click.option("--records", "records_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--ratio", type=float, default=0.9, show_default=True)
@click.option("--seed", type=int, default=7, show_default=True)
def export(records_dir: str, out_dir: str, ratio: float, seed: int) -> None:
    """Split the corpus and emit caption/VQA files plus the sidecar."""
    try:
        records = load_records(_resolve_records_dir(Path(records_dir)))
        complete = [r for r in records if r.status is RecordStatus.COMPLETE]
        skipped = len(records) - len(complete)
        if skipped:
            log.warning("skipping %d non-complete records", skipped)
        train_ids, test_ids = dataset_io.split_dataset(complete, ratio, seed)
        split_records = dataset_io.apply_split(complete, train_ids, test_ids)
        written = dataset_io.export_dataset(split_records, Path(out_dir))
        for split, files in written.items():
            log.info("%s: %s", split, ", ".join(str(f) for f in files))
        click.echo(str(Path(out_dir)))
    except Exception as exc:  # noqa: BLE001
        _fail(exc)


@main.command()
@click.option("--dataset", "dataset_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path(), default=None)
def stats(dataset_dir: str, out_path: Optional[str]) -> None:
    """Compute corpus statistics over a records directory."""
    try:
        records = load_records(_resolve_records_dir(Path(dataset_dir)))
        result = dataset_io.compute_stats(records)
        target = Path(out_path) if out_path else Path(dataset_dir) / "stats.json"
        dataset_io.save_stats(result, target)
        click.echo(str(target))
    except Exception as exc:  # noqa: BLE001
        _fail(exc)


@main.command()
@click.option("--records", "records_dir", type=click.Path(exists=True), default=None)
@click.option("--population-size", type=int, default=None,
              help="Synthetic population size when no records are given.")
@click.option("--confidence", type=float, default=0.95, show_default=True)
@click.option("--margin", type=float, default=0.04, show_default=True)
@click.option("--proportion", type=float, default=0.5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", type=click.Path(), default="review_sample.json",
              show_default=True)
def sample(records_dir: Optional[str], population_size: Optional[int], confidence: float,
           margin: float, proportion: float, seed: int, out_path: str) -> None:
    """Draw a finite-population review sample."""
    try:
        if records_dir:
            from .review import review_population
            records = load_records(_resolve_records_dir(Path(records_dir)))
            population = review_population(records)
        elif population_size:
            population = [f"item_{i:06d}" for i in range(population_size)]
        else:
            raise ConfigInvalid("provide --records or --population-size")
        result = dataset_io.sample_for_review(population, confidence, margin, proportion, seed)
        dataset_io.save_review_sample(result, Path(out_path))
        if result.clamped:
            log.warning("sample clamped to the whole population (%d items)",
                        result.sample_size)
        log.info("sample size %d of %d -> %s", result.sample_size,
                 result.population_size, out_path)
        click.echo(str(out_path))
    except Exception as exc:  # noqa: BLE001
        _fail(exc)


@main.command("serve-review")
@click.option("--records", "records_dir", required=True, type=click.Path(exists=True))
@click.option("--root", "review_root", required=True, type=click.Path())
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8099, show_default=True)
@click.option("--reject-action", type=click.Choice(["regenerate", "remove"]),
              default="regenerate", show_default=True)
@click.option("--ui", "ui_dir", type=click.Path(), default=None,
              help="Directory with the built browser UI (frontend/dist).")
def serve_review(records_dir: str, review_root: str, host: str, port: int,
                 reject_action: str, ui_dir: Optional[str]) -> None:
    """Serve the review REST API (and the browser UI against it)."""
    try:
        import uvicorn
        store = ReviewStore(Path(review_root), _resolve_records_dir(Path(records_dir)),
                            reject_action=reject_action)
        app = create_app(store, static_dir=Path(ui_dir) if ui_dir else None)
        uvicorn.run(app, host=host, port=port, log_level="warning")
    except Exception as exc:  # noqa: BLE001
        _fail(exc)


@main.command()
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True))
@click.option("--dataset", "dataset_dir", required=True, type=click.Path(exists=True))
@click.option("--judge/--no-judge", "use_judge", default=False,
              help="Score open-ended items with the judge provider.")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
def evaluate(pred_path: str, dataset_dir: str, use_judge: bool,
             config_path: Optional[str], out_path: Optional[str],
             seed: Optional[int]) -> None:
    """Score a predictions file against the dataset."""
    try:
        cfg = _load_cfg(config_path, seed)
        records = load_records(_resolve_records_dir(Path(dataset_dir)))
        predictions = load_predictions(Path(pred_path))
        judge_cfg = cfg.judge if use_judge else None
        registry = build_registry(cfg) if use_judge else None
        prompts = PromptLibrary(cfg.prompts_dir) if use_judge else None
        report = evaluate_records(records, predictions, judge_cfg, registry, prompts)
        target = Path(out_path) if out_path else Path(dataset_dir) / "eval_report.json"
        save_report(report, target)
        click.echo(str(target))
    except Exception as exc:  # noqa: BLE001
        _fail(exc)


@main.command("bench-seq")
@click.option("--images", "images_dir", type=click.Path(exists=True), default=None)
@click.option("--n", "n_requests", type=int, default=None,
              help="Request count when no image directory is given.")
@click.option("--backend", "backend_url", default=None, help="HTTP endpoint; omit to simulate.")
@click.option("--s0", type=float, default=0.59, show_default=True)
@click.option("--jitter", type=float, default=0.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--prompt", default="Analyze the perception-related SOTIF risks in this image.")
@click.option("--out", "out_path", type=click.Path(), default=None)
def bench_seq(images_dir: Optional[str], n_requests: Optional[int], backend_url: Optional[str],
              s0: float, jitter: float, seed: int, prompt: str,
              out_path: Optional[str]) -> None:
    """Sequential one-at-a-time latency benchmark."""
    try:
        image_paths = None
        if images_dir:
            image_paths = [str(p) for p in sorted(Path(images_dir).iterdir())
                           if p.suffix.lower() in _IMAGE_SUFFIXES]
            count = len(image_paths)
        else:
            count = n_requests if n_requests is not None else 0
        backend = HttpBackend(backend_url) if backend_url else None
        model = BackendModel(base_service_time=s0, jitter=jitter, seed=seed)
        report = run_sequential_bench(count, model=model, backend=backend,
                                      prompt=prompt, image_paths=image_paths)
        if out_path:
            Path(out_path).write_text(report.to_json() + "\n")
        click.echo(json.dumps(report.aggregates["response"], sort_keys=True))
    except Exception as exc:  # noqa: BLE001
        _fail(exc)


@main.command("bench-cont")
@click.option("--streams", type=int, default=4, show_default=True)
@click.option("--hz", type=float, default=30.0, show_default=True)
@click.option("--k", "k_values", default="1,3,5,10,20,30", show_default=True,
              help="Comma-separated concurrency caps to sweep.")
@click.option("--timeout", type=float, default=10.0, show_default=True)
@click.option("--duration", type=float, default=60.0, show_default=True)
@click.option("--virtual-time/--realtime", "virtual", default=True, show_default=True)
@click.option("--backend", "backend_url", default=None, help="HTTP endpoint for realtime mode.")
@click.option("--s0", type=float, default=0.55, show_default=True)
@click.option("--gamma", type=float, default=0.0, show_default=True)
@click.option("--batch-capacity", type=float, default=4.0, show_default=True)
@click.option("--jitter", type=float, default=0.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), default="bench_out", show_default=True)
def bench_cont(streams: int, hz: float, k_values: str, timeout: float, duration: float,
               virtual: bool, backend_url: Optional[str], s0: float, gamma: float,
               batch_capacity: float, jitter: float, seed: int, out_dir: str) -> None:
    """Continuous frame-stream benchmark across a concurrency sweep."""
    try:
        ks = [int(x) for x in k_values.split(",") if x.strip()]
        out = Path(out_dir)
        reports = {}
        for k in ks:
            cfg = GatewayConfig(concurrency_cap=k, timeout=timeout)
            if virtual:
                model = BackendModel(base_service_time=s0, capacity_exponent=gamma,
                                     batch_capacity=batch_capacity, jitter=jitter, seed=seed)
                report = run_continuous_bench(streams, hz, duration, cfg, model)
            else:
                if not backend_url:
                    raise ConfigInvalid("realtime mode requires --backend URL")
                report = run_continuous_bench_realtime(streams, hz, duration, cfg,
                                                       HttpBackend(backend_url))
            reports[k] = report
            write_bench_csv(report, out / f"bench_{k}.csv")
            log.info("K=%d: completed=%d drops=%s", k,
                     report.aggregates["completed"], report.aggregates["drops"])
        write_sweep_summary(reports, out / "sweep_summary.json")
        click.echo(str(out / "sweep_summary.json"))
    except Exception as exc:  # noqa: BLE001
        _fail(exc)


if __name__ == "__main__":
    main()
