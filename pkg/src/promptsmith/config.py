"""Run configuration for ``promptsmith optimize``.

A run is described by one JSON file. Relative paths in it are resolved
against the file's directory, and command-line flags override the file.
Example::

    {
      "task": "task.json",
      "data": {"validation": "val.jsonl", "test": "test.jsonl"},
      "inference": {"model_id": "small-vlm", "endpoint": "https://host/v1"},
      "optimizer": {"model_id": "large-vlm", "endpoint": "https://host/v1"},
      "search": {"epsilon": 0.3, "k": 3, "max_depth": 2, "budget": 15},
      "eso": {"max_iterations": 2, "n_bad_cases": 5},
      "memory": "memory.json",
      "out": "runs/latest",
      "seed": 0
    }

``data`` may instead give ``{"unsplit": "all.jsonl", "fractions": [0.5, 0.5]}``.
A ``"simulation"`` block replaces task, data and models with a synthetic
world (see :class:`promptsmith.simbench.SimWorld`).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .backends import ModelRef
from .errors import ConfigError
from .eso import EsoConfig
from .rws import SearchConfig


@dataclass
class ModelSpec:
    ref: ModelRef
    script: str | None = None  # responder for a simulated endpoint (see backends.scripted)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], role, base: Path) -> ModelSpec:
        ref = ModelRef.from_dict(d, role)
        script = d.get("script")
        if script and not (script.startswith("echo-label:") or script.startswith("constant:")):
            script = str(base / script)
        return cls(ref, script)

    def to_dict(self) -> dict:
        return {"model_id": self.ref.model_id, "endpoint": self.ref.endpoint}


@dataclass
class RunConfig:
    task_path: Path | None = None
    validation_path: Path | None = None
    unsplit_path: Path | None = None
    fractions: tuple[float, float] = (0.5, 0.5)
    test_path: Path | None = None
    inference: ModelSpec | None = None
    optimizer: ModelSpec | None = None
    search: SearchConfig = field(default_factory=SearchConfig)
    eso: EsoConfig = field(default_factory=EsoConfig)
    memory_path: Path = Path("memory.json")
    memory_label: str = "memory.json"  # as written in the config; goes into the report
    out_dir: Path = Path("runs/latest")
    seed: int = 0
    similarity: dict = field(default_factory=dict)
    strategy_dir: Path | None = None
    strategy_modes: dict[str, str] = field(default_factory=dict)
    simulation: dict | None = None

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any], base: Path = Path(".")) -> RunConfig:
        def path(v):
            return None if v is None else (base / v)

        try:
            data = raw.get("data", {})
            cfg = cls(
                task_path=path(raw.get("task")),
                validation_path=path(data.get("validation")),
                unsplit_path=path(data.get("unsplit")),
                fractions=tuple(data.get("fractions", (0.5, 0.5))),
                test_path=path(data.get("test")),
                search=SearchConfig(**raw.get("search", {})),
                eso=EsoConfig(**raw.get("eso", {})),
                memory_path=base / raw.get("memory", "memory.json"),
                memory_label=str(raw.get("memory", "memory.json")),
                out_dir=base / raw.get("out", "runs/latest"),
                seed=int(raw.get("seed", 0)),
                similarity=dict(raw.get("similarity", {})),
                strategy_dir=path(raw.get("strategies")),
                strategy_modes=dict(raw.get("strategy_modes", {})),
                simulation=raw.get("simulation"),
            )
            if "inference" in raw:
                cfg.inference = ModelSpec.from_dict(raw["inference"], "inference", base)
            if "optimizer" in raw:
                cfg.optimizer = ModelSpec.from_dict(raw["optimizer"], "optimizer", base)
        except (TypeError, ValueError, KeyError, AttributeError) as exc:
            raise ConfigError(f"bad run config: {exc}") from exc
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        return cls.from_dict(raw, path.parent)

    def validate(self) -> None:
        """Every referenced file must exist; real (non-simulated) runs need both models."""
        if self.simulation is None:
            if self.task_path is None:
                raise ConfigError("config needs a task file (or a simulation block)")
            if (self.validation_path is None) == (self.unsplit_path is None):
                raise ConfigError("data needs exactly one of 'validation' or 'unsplit'")
            if self.inference is None or self.optimizer is None:
                raise ConfigError("config needs inference and optimizer models")
        for spec in (self.inference, self.optimizer):
            if spec and spec.ref.simulated and self.simulation is None and not spec.script:
                raise ConfigError(f"simulated model {spec.ref.model_id!r} needs a 'script'")
            if spec and spec.script and Path(spec.script).suffix == ".json" and not Path(spec.script).is_file():
                raise ConfigError(f"script file {spec.script} not found")
        for p in (self.task_path, self.validation_path, self.unsplit_path, self.test_path):
            if p is not None and not p.is_file():
                raise ConfigError(f"file {p} not found")
        if self.strategy_dir is not None and not self.strategy_dir.is_dir():
            raise ConfigError(f"strategy directory {self.strategy_dir} not found")
