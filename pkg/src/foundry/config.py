"""Root configuration: one human-editable JSON file wiring providers, the
pipeline, the judge, the gateway, and review settings.

``${VAR}`` occurrences in string values are replaced from the environment
when the variable is set (secrets themselves should use the ``api_key_env``
indirection, which is resolved at call time, never at load time).
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .evaluation import JudgeConfig
from .gateway import BackendModel
from .providers import (
    HttpProvider,
    HttpProviderConfig,
    ProviderRegistry,
    SimulatedProvider,
    SimulatedProviderScript,
    StageBehavior,
)
from .records import PipelineConfig, Stage


class ConfigInvalid(Exception):
    pass


_ENV_PATTERN = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


def _interpolate(value):
    if isinstance(value, str):
        return _ENV_PATTERN.sub(
            lambda m: os.environ.get(m.group(1), m.group(0)), value)
    if isinstance(value, list):
        return [_interpolate(v) for v in value]
    if isinstance(value, dict):
        return {k: _interpolate(v) for k, v in value.items()}
    return value


@dataclass
class RootConfig:
    records_dir: Path
    output_dir: Path
    prompts_dir: Optional[Path]
    provider_specs: dict
    pipeline: PipelineConfig
    judge: Optional[JudgeConfig]
    backend_model: BackendModel
    gateway_timeout: float
    review: dict = field(default_factory=dict)


def default_config_dict(seed: int = 42) -> dict:
    """Offline-friendly defaults: three simulated providers with the
    generation pass rates observed in production runs."""
    behaviors = {
        "caption": {"validation_pass_probability": 0.901},
        "question": {"validation_pass_probability": 0.827},
        "answer": {"validation_pass_probability": 0.710},
    }
    return {
        "paths": {"records_dir": "records", "output_dir": "out", "prompts_dir": None},
        "providers": {
            "sim-alpha": {"type": "simulated", "seed": seed, "behaviors": behaviors},
            "sim-beta": {"type": "simulated", "seed": seed + 1, "behaviors": behaviors},
            "sim-validator": {"type": "simulated", "seed": seed + 2, "behaviors": behaviors},
        },
        "pipeline": {
            "providers": ["sim-alpha", "sim-beta"],
            "validation_provider": "sim-validator",
            "max_attempts": 5,
            "parallelism": 1,
            "seed": seed,
            "temperatures": {"caption": 0.8, "question": 0.9, "answer": 0.7},
        },
        "judge": {"provider": "sim-validator", "repetitions": 3, "temperature": 0.7},
        "gateway": {
            "timeout": 10.0,
            "backend": {"s0": 0.55, "gamma": 0.0, "batch_capacity": 4.0,
                        "jitter": 0.0, "seed": seed},
        },
        "review": {"reject_action": "regenerate"},
    }


def _stage_map(raw, default: dict) -> dict:
    if raw is None:
        return default
    if isinstance(raw, (int, float)):
        return {stage: type(next(iter(default.values())))(raw) for stage in default}
    out = dict(default)
    for key, value in raw.items():
        out[Stage(key)] = value
    return out


def parse_config(doc: dict, base_dir: Path = Path(".")) -> RootConfig:
    doc = _interpolate(doc)
    try:
        paths = doc.get("paths", {})
        pipeline_doc = doc["pipeline"]
        provider_specs = doc["providers"]
    except KeyError as exc:
        raise ConfigInvalid(f"missing config section: {exc}") from exc

    default_attempts = {Stage.CAPTION: 5, Stage.QUESTION: 5, Stage.ANSWER: 5}
    default_temps = {Stage.CAPTION: 0.8, Stage.QUESTION: 0.9, Stage.ANSWER: 0.7}
    try:
        pipeline = PipelineConfig(
            providers=tuple(pipeline_doc["providers"]),
            validation_provider=pipeline_doc["validation_provider"],
            agent_temperatures=_stage_map(pipeline_doc.get("temperatures"), default_temps),
            max_attempts=_stage_map(pipeline_doc.get("max_attempts"), default_attempts),
            parallelism=pipeline_doc.get("parallelism", 1),
            seed=pipeline_doc.get("seed", 0),
        )
    except (KeyError, ValueError) as exc:
        raise ConfigInvalid(f"bad pipeline section: {exc}") from exc
    for name in (*pipeline.providers, pipeline.validation_provider):
        if name not in provider_specs:
            raise ConfigInvalid(f"pipeline references unknown provider {name!r}")

    judge = None
    if doc.get("judge"):
        judge_doc = doc["judge"]
        judge = JudgeConfig(
            provider=judge_doc["provider"],
            repetitions=judge_doc.get("repetitions", 3),
            temperature=judge_doc.get("temperature", 0.7),
            parallelism=judge_doc.get("parallelism", 4),
        )

    gateway_doc = doc.get("gateway", {})
    backend_doc = gateway_doc.get("backend", {})
    backend_model = BackendModel(
        base_service_time=backend_doc.get("s0", 0.55),
        capacity_exponent=backend_doc.get("gamma", 0.0),
        batch_capacity=backend_doc.get("batch_capacity", 4.0),
        jitter=backend_doc.get("jitter", 0.0),
        seed=backend_doc.get("seed", 0),
    )

    prompts_dir = paths.get("prompts_dir")
    return RootConfig(
        records_dir=base_dir / paths.get("records_dir", "records"),
        output_dir=base_dir / paths.get("output_dir", "out"),
        prompts_dir=(base_dir / prompts_dir) if prompts_dir else None,
        provider_specs=provider_specs,
        pipeline=pipeline,
        judge=judge,
        backend_model=backend_model,
        gateway_timeout=gateway_doc.get("timeout", 10.0),
        review=doc.get("review", {}),
    )


def load_config(path: Path) -> RootConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigInvalid(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"config is not valid JSON: {exc}") from exc
    return parse_config(doc, base_dir=Path(path).parent)


def build_registry(cfg: RootConfig, seed_override: Optional[int] = None) -> ProviderRegistry:
    registry = ProviderRegistry()
    for name, spec in cfg.provider_specs.items():
        kind = spec.get("type", "simulated")
        if kind == "simulated":
            behaviors = {
                stage: StageBehavior(
                    validation_pass_probability=b.get("validation_pass_probability", 1.0),
                    response_templates=tuple(b.get("response_templates", ())),
                    inconsistency_rate=b.get("inconsistency_rate", 0.0),
                    latency_mean=b.get("latency_mean", 0.02),
                    latency_std=b.get("latency_std", 0.0),
                )
                for stage, b in spec.get("behaviors", {}).items()
            }
            script = SimulatedProviderScript(
                seed=seed_override if seed_override is not None else spec.get("seed", 0),
                stage_behaviors=behaviors,
            )
            registry.register(SimulatedProvider(name, script))
        elif kind == "http":
            try:
                registry.register(HttpProvider(name, HttpProviderConfig(
                    endpoint=spec["endpoint"], model=spec["model"],
                    api_key_env=spec["api_key_env"],
                    timeout=spec.get("timeout", 60.0))))
            except KeyError as exc:
                raise ConfigInvalid(f"http provider {name!r} missing {exc}") from exc
        else:
            raise ConfigInvalid(f"provider {name!r} has unknown type {kind!r}")
    return registry
