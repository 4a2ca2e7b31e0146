"""Run configuration: one JSON document, validated with every violation
reported at once, with environment-variable overrides for scalar fields.

Override convention: ``CURATOR_DIRECTOR__SELECT_RATIO=0.25`` sets
``director.select_ratio`` (prefix ``CURATOR_``, ``__`` separates path
segments, values parsed as JSON when possible, else kept as strings).
"""

from __future__ import annotations

import copy
import json
import os
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Any

from .backends import BackendDescriptor
from .director import DirectorConfig
from .errors import ConfigInvalid
from .judge import FixtureJudgeClient, HttpJudgeClient, JudgeClient
from .runner import TrainerConfig, TrainingRun, sim_descriptors
from .simulation import (
    SimWorld,
    SyntheticJudgeClient,
    default_ablation_world_config,
    default_multi_model_world_config,
    stable_hash,
)
from .store import DiskImageStore, MemoryImageStore

CONFIG_SCHEMA_VERSION = 1
ENV_PREFIX = "CURATOR_"

NAMED_WORLDS = {
    "default-ablation": default_ablation_world_config,
    "default-multi": default_multi_model_world_config,
}

DEFAULT_CONFIG: dict[str, Any] = {
    "schema_version": CONFIG_SCHEMA_VERSION,
    "seed": 0,
    "sequential": True,
    "world": "default-ablation",
    "initial_samples": 20_000,
    "store": "memory",
    "budget": None,
    "backends": None,
    "director": {
        "select_ratio": 0.20,
        "extension_count": 3,
        "mutation_rate": 0.10,
        "checking_interval": 100,
        "dataset_cap": 100_000,
        "enable_discrimination": True,
        "enable_expansion": True,
    },
    "trainer": {
        "total_steps": 50_000,
        "batch_size": 16,
        "steps_per_epoch": 25,
    },
    "judge": {
        "mode": "synthetic",
        "accuracy": None,
        "endpoint": None,
        "transcript": None,
        "auth_token": None,
    },
}


def _merge_defaults(base: dict, overrides: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge_defaults(out[key], value)
        else:
            out[key] = value
    return out


def apply_env_overrides(config: dict, environ: dict[str, str] | None = None) -> dict:
    environ = os.environ if environ is None else environ
    out = copy.deepcopy(config)
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        path = name[len(ENV_PREFIX):].lower().split("__")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        for segment in path[:-1]:
            if not isinstance(node.get(segment), dict):
                node[segment] = {}
            node = node[segment]
        node[path[-1]] = value
    return out


def validate_run_config(config: dict) -> list[str]:
    """Every violation, not just the first."""
    problems: list[str] = []

    def check(cond: bool, message: str) -> None:
        if not cond:
            problems.append(message)

    check(int(config.get("schema_version", -1)) == CONFIG_SCHEMA_VERSION,
          f"schema_version must be {CONFIG_SCHEMA_VERSION}")
    check(isinstance(config.get("seed"), int), "seed must be an integer")
    check(config.get("store") in ("memory", "disk"), "store must be 'memory' or 'disk'")
    check(isinstance(config.get("initial_samples"), int) and config["initial_samples"] >= 0,
          "initial_samples must be a non-negative integer")

    world = config.get("world")
    if isinstance(world, str):
        check(world in NAMED_WORLDS or Path(world).suffix == ".json",
              f"world must name {sorted(NAMED_WORLDS)} or a .json path, got {world!r}")
    else:
        check(isinstance(world, dict) and "profiles" in world and "learner" in world,
              "inline world must be an object with 'profiles' and 'learner'")

    director = config.get("director", {})
    if isinstance(director, dict):
        try:
            probe = DirectorConfig(
                select_ratio=float(director.get("select_ratio", 0.2)),
                extension_count=int(director.get("extension_count", 3)),
                mutation_rate=float(director.get("mutation_rate", 0.1)),
                checking_interval=int(director.get("checking_interval", 100)),
                dataset_cap=int(director.get("dataset_cap", 100_000)),
                enable_discrimination=bool(director.get("enable_discrimination", True)),
                enable_expansion=bool(director.get("enable_expansion", True)),
            )
            problems.extend(f"director.{p}" for p in probe.validate())
        except (TypeError, ValueError) as exc:
            problems.append(f"director: {exc}")
    else:
        problems.append("director must be an object")

    trainer = config.get("trainer", {})
    if isinstance(trainer, dict):
        try:
            probe_t = TrainerConfig(
                total_steps=int(trainer.get("total_steps", 50_000)),
                batch_size=int(trainer.get("batch_size", 16)),
                steps_per_epoch=int(trainer.get("steps_per_epoch", 25)),
            )
            problems.extend(probe_t.validate())
        except (TypeError, ValueError) as exc:
            problems.append(f"trainer: {exc}")
    else:
        problems.append("trainer must be an object")

    budget = config.get("budget")
    if budget is not None:
        try:
            Decimal(str(budget))
        except InvalidOperation:
            problems.append(f"budget must be a decimal string, got {budget!r}")

    judge = config.get("judge", {})
    if isinstance(judge, dict):
        mode = judge.get("mode", "synthetic")
        check(mode in ("synthetic", "http", "fixture"),
              f"judge.mode must be synthetic/http/fixture, got {mode!r}")
        if mode == "http":
            check(bool(judge.get("endpoint")), "judge.endpoint required for http mode")
        if mode == "fixture":
            check(bool(judge.get("transcript")), "judge.transcript required for fixture mode")
        accuracy = judge.get("accuracy")
        if accuracy is not None:
            check(0.5 <= float(accuracy) <= 1.0, "judge.accuracy must be in [0.5, 1]")
    else:
        problems.append("judge must be an object")

    backends = config.get("backends")
    if backends is not None:
        if not isinstance(backends, list) or not backends:
            problems.append("backends must be a non-empty list when given")
        else:
            for i, b in enumerate(backends):
                try:
                    BackendDescriptor.from_dict(b)
                except (KeyError, TypeError, ValueError) as exc:
                    problems.append(f"backends[{i}]: {exc}")
    return problems


def load_config(path: str | Path, environ: dict[str, str] | None = None) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigInvalid([f"cannot read config {path}: {exc}"]) from exc
    config = _merge_defaults(DEFAULT_CONFIG, raw)
    config = apply_env_overrides(config, environ)
    problems = validate_run_config(config)
    if problems:
        raise ConfigInvalid(problems)
    return config


def resolve_world_config(world: str | dict) -> dict:
    if isinstance(world, dict):
        return world
    if world in NAMED_WORLDS:
        return NAMED_WORLDS[world]()
    return json.loads(Path(world).read_text(encoding="utf-8"))


def build_run(config: dict, out_dir: str | Path | None = None) -> TrainingRun:
    """Wire a TrainingRun from a validated config document."""
    seed = int(config["seed"])
    if config["store"] == "disk":
        if out_dir is None:
            raise ConfigInvalid(["store=disk requires an output directory"])
        store = DiskImageStore(Path(out_dir) / "images")
    else:
        store = MemoryImageStore()
    world = SimWorld(resolve_world_config(config["world"]), store, seed=seed)

    director = config["director"]
    budget = Decimal(str(config["budget"])) if config.get("budget") is not None else None
    director_cfg = DirectorConfig(
        select_ratio=float(director["select_ratio"]),
        extension_count=int(director["extension_count"]),
        mutation_rate=float(director["mutation_rate"]),
        checking_interval=int(director["checking_interval"]),
        dataset_cap=int(director["dataset_cap"]),
        budget=budget,
        enable_discrimination=bool(director["enable_discrimination"]),
        enable_expansion=bool(director["enable_expansion"]),
    )
    trainer = config["trainer"]
    trainer_cfg = TrainerConfig(
        total_steps=int(trainer["total_steps"]),
        batch_size=int(trainer["batch_size"]),
        steps_per_epoch=int(trainer["steps_per_epoch"]),
    )

    descriptors = None
    if config.get("backends"):
        descriptors = [BackendDescriptor.from_dict(b) for b in config["backends"]]

    judge_cfg = config["judge"]
    judge_client: JudgeClient | None
    if judge_cfg["mode"] == "http":
        judge_client = HttpJudgeClient(judge_cfg["endpoint"], store,
                                       auth_token=judge_cfg.get("auth_token"))
    elif judge_cfg["mode"] == "fixture":
        judge_client = FixtureJudgeClient(judge_cfg["transcript"])
    else:
        judge_client = SyntheticJudgeClient(
            world, accuracy=judge_cfg.get("accuracy"),
            seed=stable_hash(f"judge-stream|{seed}"),
        )

    return TrainingRun(
        world,
        director_cfg,
        trainer_cfg,
        seed=seed,
        descriptors=descriptors,
        judge_client=judge_client,
        out_dir=out_dir,
    )
