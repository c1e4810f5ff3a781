"""The strategy pool and prompt candidates built from it.

Suffix strategies append a fixed instruction to the prompt with no model
call. Rewrite strategies send a template to the optimizer model and take its
answer as the new prompt. A combo applies its members left to right.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Literal, Mapping, Sequence

from .backends import Model
from .errors import ComboRepeat, MissingOptimizer, OptimizerEmptyResponse, UnknownStrategy
from .templates import fill_template

Combo = tuple[str, ...]
Mode = Literal["suffix", "rewrite"]

BUILTIN_IDS = (
    "Reasoning",
    "Reinterpretation",
    "Simplification",
    "RolePrompting",
    "Decomposition",
    "SelfCriticism",
    "Caption",
    "Rephrasing",
)


@dataclass(frozen=True)
class Strategy:
    strategy_id: str
    mode: Mode
    template: str

    def __post_init__(self):
        if self.mode not in ("suffix", "rewrite"):
            raise ValueError(f"{self.strategy_id}: mode must be suffix or rewrite")
        if self.mode == "rewrite" and self.template.count("{prompt}") != 1:
            raise ValueError(f"{self.strategy_id}: rewrite templates need exactly one {{prompt}}")

    @classmethod
    def from_dict(cls, d: Mapping[str, str]) -> Strategy:
        return cls(str(d["strategy_id"]), d["mode"], str(d["template"]))  # type: ignore[arg-type]

    def to_dict(self) -> dict[str, str]:
        return {"strategy_id": self.strategy_id, "mode": self.mode, "template": self.template}


class StrategyPool:
    """Ordered, id-unique collection of strategies."""

    def __init__(self, strategies: Iterable[Strategy]):
        self._by_id: dict[str, Strategy] = {}
        for s in strategies:
            if s.strategy_id in self._by_id:
                raise ValueError(f"duplicate strategy id {s.strategy_id!r}")
            self._by_id[s.strategy_id] = s

    def __getitem__(self, strategy_id: str) -> Strategy:
        try:
            return self._by_id[strategy_id]
        except KeyError:
            raise UnknownStrategy(strategy_id) from None

    def __contains__(self, strategy_id: object) -> bool:
        return strategy_id in self._by_id

    def __iter__(self) -> Iterator[Strategy]:
        return iter(self._by_id.values())

    def __len__(self) -> int:
        return len(self._by_id)

    @property
    def ids(self) -> list[str]:
        return list(self._by_id)

    def with_modes(self, overrides: Mapping[str, Mode]) -> StrategyPool:
        """Copy with some strategies switched between suffix and rewrite mode."""
        return StrategyPool(replace(s, mode=overrides.get(s.strategy_id, s.mode)) for s in self)

    def extended(self, extra: Iterable[Strategy]) -> StrategyPool:
        return StrategyPool([*self, *extra])

    @classmethod
    def from_dir(cls, path: str | Path) -> StrategyPool:
        files = sorted(Path(path).glob("*.json"))
        return cls(Strategy.from_dict(json.loads(f.read_text(encoding="utf-8"))) for f in files)


def builtin_pool() -> StrategyPool:
    root = resources.files("promptsmith.resources.strategies")
    files = sorted((f for f in root.iterdir() if f.name.endswith(".json")), key=lambda f: f.name)
    return StrategyPool(Strategy.from_dict(json.loads(f.read_text(encoding="utf-8"))) for f in files)


@dataclass(frozen=True)
class PromptCandidate:
    text: str
    base_prompt: str
    combo: Combo = ()
    eso_iteration: int = 0
    lineage_note: str = ""

    def __post_init__(self):
        if not self.text:
            raise ValueError("prompt text must be non-empty")

    @classmethod
    def initial(cls, prompt: str) -> PromptCandidate:
        return cls(text=prompt, base_prompt=prompt, lineage_note="base")

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "base_prompt": self.base_prompt,
            "combo": list(self.combo),
            "eso_iteration": self.eso_iteration,
            "lineage_note": self.lineage_note,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> PromptCandidate:
        return cls(d["text"], d["base_prompt"], tuple(d.get("combo", ())), int(d.get("eso_iteration", 0)),
                   d.get("lineage_note", ""))


def apply_strategy(base: PromptCandidate, s: Strategy, optimizer: Model | None = None) -> PromptCandidate:
    if s.strategy_id in base.combo:
        raise ComboRepeat(f"{s.strategy_id} already applied in {base.combo}")
    if s.mode == "suffix":
        if "{prompt}" in s.template:
            text = fill_template(s.template, prompt=base.text)
        else:
            text = base.text + "\n" + s.template
        how = "suffix"
    else:
        if optimizer is None:
            raise MissingOptimizer(f"{s.strategy_id} rewrites the prompt and needs an optimizer model")
        request = fill_template(s.template, prompt=base.text)
        text = optimizer.ask(request, context={"purpose": f"strategy:{s.strategy_id}", "prompt": base.text}).strip()
        if not text:
            raise OptimizerEmptyResponse(f"optimizer returned nothing for {s.strategy_id}")
        how = "rewrite"
    combo = base.combo + (s.strategy_id,)
    note = (base.lineage_note + " > " if base.lineage_note else "") + f"{s.strategy_id}({how})"
    return PromptCandidate(text=text, base_prompt=base.base_prompt, combo=combo,
                           eso_iteration=base.eso_iteration, lineage_note=note)


def compose_combo(
    base: PromptCandidate,
    combo: Sequence[str],
    pool: StrategyPool,
    optimizer: Model | None = None,
    cache: dict[Combo, PromptCandidate] | None = None,
) -> PromptCandidate:
    """Apply ``combo`` to ``base`` left to right.

    ``cache`` maps already-built prefixes (relative to the same base) to their
    candidates, so a search over many combos rewrites each prefix only once.
    """
    if len(set(combo)) != len(combo):
        raise ComboRepeat(f"combo repeats a strategy: {tuple(combo)}")
    current = base
    start = 0
    if cache is not None:
        for n in range(len(combo), 0, -1):
            hit = cache.get(tuple(combo[:n]))
            if hit is not None:
                current, start = hit, n
                break
    for n in range(start, len(combo)):
        current = apply_strategy(current, pool[combo[n]], optimizer)
        if cache is not None:
            cache[tuple(combo[: n + 1])] = current
    return current


def replay_lineage(c: PromptCandidate, pool: StrategyPool, optimizer: Model | None = None) -> PromptCandidate:
    """Rebuild a strategy-stage candidate from its base prompt and combo."""
    return compose_combo(PromptCandidate.initial(c.base_prompt), c.combo, pool, optimizer)


def combo_label(combo: Sequence[str]) -> str:
    return " + ".join(combo) if combo else "(none)"
