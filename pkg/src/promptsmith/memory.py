"""Per-(task, model) action-reward memory with transfer and file persistence.

Mean rewards are stored as :class:`fractions.Fraction`. Rewards arrive as
accuracies (ratios) or floats, both of which convert exactly, so incremental
means are order independent and smoothing preserves the global mean with no
rounding at all. The JSON file carries a float for readers and the exact
ratio for round trips.
"""

from __future__ import annotations

import copy
import json
import logging
import os
import re
import tempfile
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Real
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol, Sequence

from filelock import FileLock

from .backends import Model
from .errors import (
    BackendError,
    CorruptFile,
    EmptyStats,
    RewardOutOfRange,
    SchemaVersionMismatch,
    SimilarityProviderFailure,
    VersionConflict,
)
from .strategies import Combo
from .templates import SIMILARITY_JUDGE, fill_template, load_template

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
PRIOR_MEAN = Fraction(1, 2)


@dataclass(frozen=True)
class MemoryKey:
    task_id: str
    model_id: str
    task_descriptor: str = ""

    @property
    def ident(self) -> tuple[str, str]:
        return (self.task_id, self.model_id)


@dataclass(frozen=True)
class ActionStats:
    action: Combo
    mean_reward: Fraction = PRIOR_MEAN
    count: int = 0


@dataclass
class MemoryEntry:
    key: MemoryKey
    actions: dict[Combo, ActionStats] = field(default_factory=dict)

    def stats(self) -> list[ActionStats]:
        return list(self.actions.values())


class MemoryModule:
    def __init__(self):
        self.entries: dict[tuple[str, str], MemoryEntry] = {}
        self.version = 0
        # version of the file this module was read from / last written to
        self.base_version: int | None = None

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MemoryModule):
            return NotImplemented
        return self.version == other.version and self.entries == other.entries

    def keys(self) -> list[MemoryKey]:
        return [self.entries[k].key for k in sorted(self.entries)]

    def get(self, key: MemoryKey | tuple[str, str]) -> MemoryEntry | None:
        ident = key.ident if isinstance(key, MemoryKey) else key
        return self.entries.get(ident)

    def stats(self, key: MemoryKey | tuple[str, str]) -> list[ActionStats]:
        entry = self.get(key)
        return entry.stats() if entry else []

    def put(self, key: MemoryKey, stats: Iterable[ActionStats]) -> None:
        """Replace the entry for ``key`` with ``stats``."""
        actions: dict[Combo, ActionStats] = {}
        for s in stats:
            if s.action in actions:
                raise ValueError(f"duplicate action {s.action} for {key.ident}")
            actions[s.action] = s
        self.entries[key.ident] = MemoryEntry(key, actions)
        self.version += 1

    def prune(self, task_id: str, model_id: str) -> bool:
        if (task_id, model_id) not in self.entries:
            return False
        del self.entries[(task_id, model_id)]
        self.version += 1
        return True

    def to_dict(self) -> dict:
        entries = []
        for ident in sorted(self.entries):
            e = self.entries[ident]
            entries.append({
                "task_id": e.key.task_id,
                "model_id": e.key.model_id,
                "task_descriptor": e.key.task_descriptor,
                "actions": [
                    {
                        "combo": list(a.action),
                        "mean_reward": float(a.mean_reward),
                        "mean_exact": f"{a.mean_reward.numerator}/{a.mean_reward.denominator}",
                        "count": a.count,
                    }
                    for a in e.actions.values()
                ],
            })
        return {"schema_version": SCHEMA_VERSION, "version": self.version, "entries": entries}

    @classmethod
    def from_dict(cls, raw: Mapping) -> MemoryModule:
        schema = raw.get("schema_version", SCHEMA_VERSION)
        if schema != SCHEMA_VERSION:
            raise SchemaVersionMismatch(f"memory schema {schema!r}, this build reads {SCHEMA_VERSION}")
        m = cls()
        try:
            for e in raw["entries"]:
                key = MemoryKey(str(e["task_id"]), str(e["model_id"]), str(e.get("task_descriptor", "")))
                stats = []
                for a in e["actions"]:
                    mean = Fraction(a["mean_exact"]) if "mean_exact" in a else Fraction(a["mean_reward"])
                    stats.append(ActionStats(tuple(a["combo"]), mean, int(a["count"])))
                m.put(key, stats)
            m.version = int(raw["version"])
        except (KeyError, TypeError, ValueError, ZeroDivisionError) as exc:
            raise CorruptFile(f"malformed memory data: {exc}") from exc
        return m


def _as_fraction(x: Real | Fraction) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


def update_memory(m: MemoryModule, key: MemoryKey, action: Sequence[str], reward: Real | Fraction) -> MemoryModule:
    """Fold one observed reward into the running mean for ``action`` (in place)."""
    r = _as_fraction(reward)
    if not 0 <= r <= 1:
        raise RewardOutOfRange(f"reward {reward} outside [0, 1]")
    entry = m.entries.get(key.ident)
    if entry is None:
        entry = m.entries[key.ident] = MemoryEntry(key)
    action = tuple(action)
    old = entry.actions.get(action, ActionStats(action))
    entry.actions[action] = ActionStats(action, (old.mean_reward * old.count + r) / (old.count + 1), old.count + 1)
    m.version += 1
    return m


def smooth_distribution(stats: Sequence[ActionStats], rho: Real | Fraction) -> list[ActionStats]:
    """Shrink each mean toward the global mean with weight ``1 - rho``.

    ``rho = 1`` leaves means untouched, ``rho = 0`` flattens them to the
    global mean. Counts reset to zero: the result is a prior for a new
    (task, model) pair, not a record of observations on it.
    """
    if not stats:
        raise EmptyStats("cannot smooth an empty distribution")
    w = _as_fraction(rho)
    if not 0 <= w <= 1:
        raise ValueError(f"rho must be in [0, 1], got {rho}")
    g = sum((s.mean_reward for s in stats), Fraction(0)) / len(stats)
    return [ActionStats(s.action, w * s.mean_reward + (1 - w) * g, 0) for s in stats]


def _rank_key(s: ActionStats):
    return (-s.mean_reward, -s.count, s.action)


def top_k(stats: Sequence[ActionStats], k: int) -> list[Combo]:
    """Best ``k`` actions by mean; ties go to more observations, then the smaller combo."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return [s.action for s in sorted(stats, key=_rank_key)[:k]]


def ranked(stats: Sequence[ActionStats]) -> list[ActionStats]:
    return sorted(stats, key=_rank_key)


# -- similarity ------------------------------------------------------------


class Similarity(Protocol):
    def __call__(self, stored: MemoryKey, target: MemoryKey) -> float: ...


class StaticSimilarity:
    """Similarity looked up in a configured table.

    ``table`` keys are either ``(task_id, model_id)`` of the stored entry
    (similarity to whatever the current target is) or a pair of such tuples
    ``(stored, target)``. An entry compared with itself scores 1 unless the
    table says otherwise; everything else falls back to ``default``.
    """

    def __init__(self, table: Mapping | None = None, default: float = 0.0):
        self.table = dict(table or {})
        self.default = default

    @classmethod
    def from_rows(cls, rows: Iterable[Mapping], default: float = 0.0) -> StaticSimilarity:
        table = {}
        for r in rows:
            stored = (str(r["task_id"]), str(r["model_id"]))
            if "target_task_id" in r:
                target = (str(r["target_task_id"]), str(r.get("target_model_id", r["model_id"])))
                table[(stored, target)] = float(r["rho"])
            else:
                table[stored] = float(r["rho"])
        return cls(table, default)

    def __call__(self, stored: MemoryKey, target: MemoryKey) -> float:
        if (stored.ident, target.ident) in self.table:
            return self.table[(stored.ident, target.ident)]
        if stored.ident in self.table:
            return self.table[stored.ident]
        return 1.0 if stored.ident == target.ident else self.default


_NUMBER = re.compile(r"-?\d+(?:\.\d+)?")


class JudgeSimilarity:
    """Ask the optimizer model to rate similarity; the answer is clamped to [0, 1]."""

    def __init__(self, optimizer: Model):
        self.optimizer = optimizer

    def __call__(self, stored: MemoryKey, target: MemoryKey) -> float:
        prompt = fill_template(
            load_template(SIMILARITY_JUDGE),
            stored_task=stored.task_descriptor or stored.task_id,
            stored_model=stored.model_id,
            target_task=target.task_descriptor or target.task_id,
            target_model=target.model_id,
        )
        try:
            text = self.optimizer.ask(prompt, context={"purpose": "similarity"})
        except BackendError as exc:
            raise SimilarityProviderFailure(str(exc)) from exc
        m = _NUMBER.search(text)
        if m is None:
            raise SimilarityProviderFailure(f"no number in judge answer {text[:80]!r}")
        return min(1.0, max(0.0, float(m.group())))


def select_reference(m: MemoryModule, target: MemoryKey, similarity: Similarity) -> tuple[MemoryKey, float] | None:
    """Stored key most similar to ``target``; ties go to the smallest (task_id, model_id).

    Returns None on an empty memory, and also when the similarity provider
    fails (the caller then cold-starts).
    """
    best: tuple[MemoryKey, float] | None = None
    for key in m.keys():
        if not m.stats(key):
            continue
        try:
            rho = float(similarity(key, target))
        except SimilarityProviderFailure as exc:
            log.warning("similarity provider failed (%s); falling back to cold start", exc)
            return None
        if not 0.0 <= rho <= 1.0:
            raise ValueError(f"similarity {rho} for {key.ident} outside [0, 1]")
        if best is None or rho > best[1]:
            best = (key, rho)
    return best


# -- persistence -----------------------------------------------------------


def _read_raw(path: Path) -> dict:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorruptFile(f"{path}: {exc}") from exc


def load_memory(path: str | Path) -> MemoryModule:
    path = Path(path)
    raw = _read_raw(path)
    if not isinstance(raw, dict):
        raise CorruptFile(f"{path}: expected a JSON object")
    m = MemoryModule.from_dict(raw)
    m.base_version = m.version
    return m


def load_or_new(path: str | Path) -> MemoryModule:
    path = Path(path)
    return load_memory(path) if path.exists() else MemoryModule()


def _lock(path: Path) -> FileLock:
    return FileLock(str(path) + ".lock", timeout=30)


def save_memory(m: MemoryModule, path: str | Path) -> None:
    """Write ``m`` atomically, refusing if the file changed since ``m`` was read."""
    path = Path(path)
    with _lock(path):
        on_disk = None
        if path.exists():
            raw = _read_raw(path)
            on_disk = int(raw.get("version", -1)) if isinstance(raw, dict) else -1
        if on_disk != m.base_version:
            raise VersionConflict(m.base_version, on_disk)
        atomic_write(path, json.dumps(m.to_dict(), indent=2, ensure_ascii=False) + "\n")
        m.base_version = m.version


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def transact(path: str | Path, mutate: Callable[[MemoryModule], None], retries: int = 5) -> MemoryModule:
    """Read-modify-write with retry: on a version conflict, re-read and re-apply ``mutate``."""
    for attempt in range(retries + 1):
        m = load_or_new(path)
        mutate(m)
        try:
            save_memory(m, path)
            return m
        except VersionConflict:
            if attempt == retries:
                raise
            log.info("memory file %s changed underneath us; retrying", path)
    raise AssertionError("unreachable")


def commit_entries(m: MemoryModule, path: str | Path, idents: Iterable[tuple[str, str]], retries: int = 5) -> MemoryModule:
    """Save ``m``; on conflict, merge just the given entries into a fresh read."""
    try:
        save_memory(m, path)
        return m
    except VersionConflict:
        pass
    idents = list(idents)
    entries = {i: copy.deepcopy(m.entries[i]) for i in idents if i in m.entries}

    def merge(fresh: MemoryModule) -> None:
        for ident, entry in entries.items():
            fresh.entries[ident] = copy.deepcopy(entry)
            fresh.version += 1

    return transact(path, merge, retries)
