"""Run configuration: one JSON document merging every component's settings.

Precedence is built-in defaults < config file < ``--set section.key=value``
overrides. Override values are parsed as JSON when possible (``4``,
``true``, ``[1, 2]``) and taken as plain strings otherwise.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

from .data.synth import SyntheticSpec
from .errors import ConfigError
from .geometry import RegularityConfig
from .graph import GraphConfig
from .model import Ablation, ModelConfig
from .training import TrainConfig

SECTIONS = ("graph", "model", "train", "ablation", "synth", "run")


@dataclass(frozen=True)
class RunOptions:
    seed: int = 0
    workers: int = 1
    eval_every: int = 1


@dataclass(frozen=True)
class RunConfig:
    graph: GraphConfig = field(default_factory=GraphConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ablation: Ablation = field(default_factory=Ablation)
    synth: SyntheticSpec = field(default_factory=SyntheticSpec)
    run: RunOptions = field(default_factory=RunOptions)

    def to_json(self) -> dict:
        return {
            "graph": asdict(self.graph),
            "model": self.model.to_json(),
            "train": self.train.to_json(),
            "ablation": asdict(self.ablation),
            "synth": self.synth.to_json(),
            "run": asdict(self.run),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(doc) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}; expected {SECTIONS}")
        try:
            g = dict(doc.get("graph", {}))
            if isinstance(g.get("regularity"), dict):
                g["regularity"] = RegularityConfig(**g["regularity"])
            return cls(
                graph=GraphConfig(**g),
                model=ModelConfig.from_json(doc.get("model", {})),
                train=TrainConfig.from_json(doc.get("train", {})),
                ablation=Ablation(**doc.get("ablation", {})),
                synth=SyntheticSpec.from_json(doc.get("synth", {})),
                run=RunOptions(**doc.get("run", {})),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def with_overrides(self, overrides: Iterable[str]) -> "RunConfig":
        overrides = list(overrides)
        doc = self.to_json()
        if overrides:
            doc["model"] = _release_derived(doc["model"])
        for item in overrides:
            key, sep, raw = item.partition("=")
            if not sep:
                raise ConfigError(f"override {item!r} is not of the form section.key=value")
            path = key.strip().split(".")
            if path[0] not in SECTIONS or len(path) < 2:
                raise ConfigError(f"override key {key!r} must start with one of {SECTIONS}")
            node = doc
            for part in path[:-1]:
                if not isinstance(node.get(part), dict):
                    raise ConfigError(f"unknown config key {key!r}")
                node = node[part]
            if path[-1] not in node:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                node[path[-1]] = json.loads(raw)
            except json.JSONDecodeError:
                node[path[-1]] = raw
        return RunConfig.from_json(doc)

    def save(self, path: str | Path):
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")


def _release_derived(model: dict) -> dict:
    """Reset hidden widths that equal their width-derived defaults, so a width override rederives them."""
    auto = ModelConfig(width=model["width"], heads=model["heads"]).to_json()
    out = dict(model)
    for k in ("vertex_embed_width", "edge_embed_width", "rse_hidden", "instance_hidden"):
        if out[k] == auto[k]:
            out[k] = None
    return out


def load_config(path: str | Path | None = None, overrides: Iterable[str] = ()) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
        cfg = RunConfig.from_json(doc)
    return cfg.with_overrides(overrides)
