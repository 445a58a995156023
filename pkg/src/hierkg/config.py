"""Run configuration: one JSON document with a section per module."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .decoder.transformer import DecoderConfig
from .hisl.encoder import EncoderConfig
from .train.loop import TrainConfig
from .train.tasks import TaskSpec

SEED_ENV = "UNIHR_SEED"
STAGES = ("base", "triple")


class ConfigError(ValueError):
    pass


def _section(cls, data: dict | None, name: str):
    data = dict(data or {})
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"section {name!r}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section {name!r}: {exc}") from exc


@dataclass
class DataConfig:
    path: str = ""
    flavor: str | None = None  # None: read from the dataset's meta.json

    def resolve(self, base: Path) -> Path:
        p = Path(self.path)
        return p if p.is_absolute() else (base / p)


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    task: TaskSpec | None = None  # None: default task of the dataset flavor
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    out: str = "run"
    stage: str = "base"
    base_checkpoint: str | None = None
    fact_nodes: str = "auto"
    # where relative paths are resolved; not serialized
    root: Path = field(default=Path("."), repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.stage not in STAGES:
            raise ConfigError(f"stage must be one of {STAGES}")
        if self.fact_nodes not in ("auto", "all"):
            raise ConfigError("fact_nodes must be 'auto' or 'all'")
        self.sync_seed()

    def sync_seed(self) -> None:
        self.encoder.seed = self.seed
        self.train.seed = self.seed

    @classmethod
    def from_dict(cls, doc: dict, root: Path | str = ".") -> "RunConfig":
        doc = dict(doc)
        known = {f.name for f in fields(cls)} - {"root"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
        kw = {k: v for k, v in doc.items() if k in ("seed", "out", "stage", "base_checkpoint", "fact_nodes")}
        task = doc.get("task")
        enc = dict(doc.get("encoder") or {})
        if "ablate" in enc:
            enc["ablate"] = tuple(enc["ablate"])
        try:
            return cls(data=_section(DataConfig, doc.get("data"), "data"),
                       task=None if task is None else _section(TaskSpec, task, "task"),
                       encoder=_section(EncoderConfig, enc, "encoder"),
                       decoder=_section(DecoderConfig, doc.get("decoder"), "decoder"),
                       train=_section(TrainConfig, doc.get("train"), "train"),
                       root=Path(root), **kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path, env: dict | None = None) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        cfg = cls.from_dict(doc, root=path.parent)
        env = os.environ if env is None else env
        if env.get(SEED_ENV):
            try:
                cfg.seed = int(env[SEED_ENV])
            except ValueError as exc:
                raise ConfigError(f"{SEED_ENV} must be an integer") from exc
            cfg.sync_seed()
        return cfg

    def to_dict(self) -> dict:
        return {
            "data": asdict(self.data),
            "task": None if self.task is None else self.task.to_dict(),
            "encoder": self.encoder.to_dict(),
            "decoder": self.decoder.to_dict(),
            "train": self.train.to_dict(),
            "seed": self.seed,
            "out": self.out,
            "stage": self.stage,
            "base_checkpoint": self.base_checkpoint,
            "fact_nodes": self.fact_nodes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def snapshot(self, run_dir: Path) -> dict:
        """Config with every path made absolute, so the snapshot reruns from anywhere."""
        doc = self.to_dict()
        doc["data"]["path"] = str(self.data.resolve(self.root).resolve())
        doc["out"] = str(run_dir.resolve())
        if self.base_checkpoint:
            doc["base_checkpoint"] = str(self.path(self.base_checkpoint).resolve())
        return doc

    def path(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else self.root / q

    @property
    def out_dir(self) -> Path:
        return self.path(self.out)
