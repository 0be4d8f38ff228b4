"""Run configuration: one JSON document, dotted-path overrides, per-dataset
defaults shipped as package data."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

from .distill import ClusterTaskSpec, DistillMode
from .errors import ConfigError
from .stage1 import DESK_ENCODER, Stage1Config
from .stage2 import Stage2Config
from .knowledge import KnowledgeConfig
from .util import sha256_text

TASKS = ("ner", "mner", "gmner")


@dataclass(frozen=True)
class DatasetPaths:
    format: str = "jsonl"  # jsonl | conll
    train: str = ""
    test: str = ""
    merge_dev: bool = False
    repair_bio: bool = False

    def __post_init__(self):
        if self.format not in ("jsonl", "conll"):
            raise ConfigError(f"unknown dataset format {self.format!r}")


@dataclass(frozen=True)
class RunConfig:
    task: str = "ner"
    dataset: DatasetPaths = field(default_factory=DatasetPaths)
    encoder: dict = field(default_factory=lambda: dict(DESK_ENCODER))
    stage1: Stage1Config = field(default_factory=Stage1Config)
    stage2: Stage2Config = field(default_factory=Stage2Config)
    knowledge: KnowledgeConfig = field(default_factory=KnowledgeConfig)
    distill_mode: DistillMode = DistillMode.ADAPTIVE
    folds: int = 4
    seeds: tuple[int, ...] = (0,)
    output_dir: str = "runs/out"
    noise_bench: ClusterTaskSpec = field(default_factory=ClusterTaskSpec)
    noise_rates: tuple[float, ...] = (0.0, 0.1, 0.2)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.task in ("ner", "mner") and self.stage2.lambda_grounding != 0.0:
            raise ConfigError(f"task {self.task}: lambda_grounding must be 0")
        if self.task == "gmner" and self.stage2.lambda_grounding <= 0.0:
            raise ConfigError("task gmner: lambda_grounding must be positive")
        if not self.seeds:
            raise ConfigError("at least one seed required")

    def stage2_distill_mode(self) -> DistillMode:
        """Stage-2 distillation is active for the multimodal tasks only; the
        text-only task distills in stage 1 alone."""
        return DistillMode.OFF if self.task == "ner" else self.distill_mode

    def to_dict(self) -> dict:
        payload = {
            "task": self.task,
            "dataset": asdict(self.dataset),
            "encoder": dict(self.encoder),
            "stage1": asdict(self.stage1),
            "stage2": asdict(self.stage2),
            "knowledge": asdict(self.knowledge),
            "distill": {"mode": self.distill_mode.value},
            "folds": self.folds,
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
            "noise_bench": asdict(self.noise_bench),
            "noise_rates": list(self.noise_rates),
        }
        return payload

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return sha256_text(self.canonical_json())

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {
            "task", "dataset", "encoder", "stage1", "stage2", "knowledge",
            "distill", "folds", "seeds", "output_dir", "noise_bench", "noise_rates",
        }
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(
                task=raw.get("task", "ner"),
                dataset=DatasetPaths(**raw.get("dataset", {})),
                encoder=dict(DESK_ENCODER, **raw.get("encoder", {})),
                stage1=Stage1Config(**raw.get("stage1", {})),
                stage2=Stage2Config(**raw.get("stage2", {})),
                knowledge=KnowledgeConfig(**raw.get("knowledge", {})),
                distill_mode=DistillMode(raw.get("distill", {}).get("mode", "adaptive")),
                folds=int(raw.get("folds", 4)),
                seeds=tuple(int(s) for s in raw.get("seeds", [0])),
                output_dir=raw.get("output_dir", "runs/out"),
                noise_bench=ClusterTaskSpec(**raw.get("noise_bench", {})),
                noise_rates=tuple(float(r) for r in raw.get("noise_rates", (0.0, 0.1, 0.2))),
            )
        except TypeError as err:
            raise ConfigError(f"bad config field: {err}") from None


def _coerce(value: str):
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply ``a.b.c=value`` overrides onto the raw config dict."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, _, value = item.partition("=")
        node = raw
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-object")
        node[parts[-1]] = _coerce(value)
    return raw


def load_config(path: str | Path, overrides: list[str] | None = None) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    if overrides:
        raw = apply_overrides(raw, list(overrides))
    return RunConfig.from_dict(raw)


def default_config(name: str) -> RunConfig:
    """A packaged per-dataset default: conll2003, twitter2015, twitter2017,
    gmner, or synthetic."""
    try:
        text = (resources.files("spanner") / "configs" / f"{name}.json").read_text()
    except FileNotFoundError:
        raise ConfigError(f"no packaged config named {name!r}") from None
    return RunConfig.from_dict(json.loads(text))


def default_config_names() -> list[str]:
    return ["conll2003", "twitter2015", "twitter2017", "gmner", "synthetic"]
