"""Tasks, samples and datasets: JSONL ingest, canonical save, seeded splits."""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal, Mapping

from .errors import (
    BadFractions,
    DuplicateSampleId,
    EmptyDataset,
    InvalidTask,
    MalformedLine,
    UnknownLabel,
)
from .labels import match_label, normalize_text

MediaKind = Literal["image_path", "image_url", "image_base64", "none"]
SplitTag = Literal["train", "validation", "test", "unsplit"]

# JSONL "image_kind" <-> MediaRef.kind
_KIND_FROM_FILE = {"path": "image_path", "url": "image_url", "base64": "image_base64"}
_KIND_TO_FILE = {v: k for k, v in _KIND_FROM_FILE.items()}


@dataclass(frozen=True)
class Task:
    task_id: str
    name: str
    category: str
    initial_prompt: str
    label_set: tuple[str, ...]
    description: str = ""

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Task:
        try:
            return cls(
                task_id=str(d["task_id"]),
                name=str(d.get("name", d["task_id"])),
                category=str(d.get("category", "")),
                initial_prompt=str(d["initial_prompt"]),
                label_set=tuple(str(x) for x in d["label_set"]),
                description=str(d.get("description", "")),
            )
        except (KeyError, TypeError) as exc:
            raise InvalidTask(f"bad task definition: {exc}") from exc

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "name": self.name,
            "category": self.category,
            "initial_prompt": self.initial_prompt,
            "label_set": list(self.label_set),
            "description": self.description,
        }

    @property
    def descriptor(self) -> str:
        """Free-text summary used when comparing tasks for memory transfer."""
        parts = [self.name, self.category, self.description, "labels: " + " / ".join(self.label_set)]
        return " | ".join(p for p in parts if p)


@dataclass(frozen=True)
class Violation:
    field: str
    rule: str

    def __str__(self) -> str:
        return f"{self.field}: {self.rule}"


def validate_task(t: Task) -> list[Violation]:
    out: list[Violation] = []
    if not t.task_id.strip():
        out.append(Violation("task_id", "must be non-empty"))
    if not t.initial_prompt.strip():
        out.append(Violation("initial_prompt", "must be non-empty"))
    if len(t.label_set) < 2:
        out.append(Violation("label_set", "needs at least 2 labels"))
    seen: dict[str, str] = {}
    for label in t.label_set:
        key = normalize_text(label)
        if not key:
            out.append(Violation("label_set", f"label {label!r} is empty after normalization"))
        elif key in seen:
            out.append(Violation("label_set", f"labels {seen[key]!r} and {label!r} collide after normalization"))
        else:
            seen[key] = label
    return out


def load_task(path: str | Path) -> Task:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidTask(f"{path}: {exc}") from exc
    task = Task.from_dict(raw)
    problems = validate_task(task)
    if problems:
        raise InvalidTask("; ".join(map(str, problems)))
    return task


@dataclass(frozen=True)
class MediaRef:
    kind: MediaKind
    payload: str = ""


@dataclass(frozen=True)
class Sample:
    sample_id: str
    gold_label: str
    media: tuple[MediaRef, ...] = ()
    extra: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class Dataset:
    task_id: str
    samples: tuple[Sample, ...]
    split_tag: SplitTag = "unsplit"

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def by_id(self) -> dict[str, Sample]:
        return {s.sample_id: s for s in self.samples}


def _parse_sample(obj: Any, line_no: int, task: Task) -> Sample:
    if not isinstance(obj, dict):
        raise MalformedLine(line_no, "expected a JSON object")
    sid, gold = obj.get("sample_id"), obj.get("gold_label")
    if not isinstance(sid, str) or not sid:
        raise MalformedLine(line_no, "sample_id must be a non-empty string")
    if not isinstance(gold, str):
        raise MalformedLine(line_no, "gold_label must be a string")

    image, kind = obj.get("image"), obj.get("image_kind")
    if image is None:
        media: tuple[MediaRef, ...] = ()
    elif not isinstance(image, str) or kind not in _KIND_FROM_FILE:
        raise MalformedLine(line_no, "image must be a string with image_kind path|url|base64")
    else:
        media = (MediaRef(_KIND_FROM_FILE[kind], image),)

    extra = obj.get("extra", {}) or {}
    if not isinstance(extra, dict) or not all(isinstance(v, str) for v in extra.values()):
        raise MalformedLine(line_no, "extra must map strings to strings")

    label = match_label(gold, task.label_set)
    if label is None:
        raise UnknownLabel(sid, gold)
    return Sample(sample_id=sid, gold_label=label, media=media, extra=dict(extra))


def load_dataset(path: str | Path, task: Task, split_tag: SplitTag = "unsplit") -> Dataset:
    samples: list[Sample] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedLine(line_no, str(exc)) from exc
            sample = _parse_sample(obj, line_no, task)
            if sample.sample_id in seen:
                raise DuplicateSampleId(sample.sample_id)
            seen.add(sample.sample_id)
            samples.append(sample)
    return Dataset(task.task_id, tuple(samples), split_tag)


def sample_to_json(s: Sample) -> str:
    """Canonical one-line encoding; load followed by save reproduces it byte for byte."""
    if len(s.media) > 1:
        raise ValueError(f"sample {s.sample_id!r}: the JSONL schema holds one image per sample")
    media = s.media[0] if s.media and s.media[0].kind != "none" else None
    obj = {
        "sample_id": s.sample_id,
        "image": media.payload if media else None,
        "image_kind": _KIND_TO_FILE[media.kind] if media else None,
        "gold_label": s.gold_label,
        "extra": dict(s.extra),
    }
    return json.dumps(obj, ensure_ascii=False)


def save_dataset(d: Dataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in d.samples:
            fh.write(sample_to_json(s) + "\n")


def split_dataset(d: Dataset, fractions: tuple[float, float], seed: int) -> tuple[Dataset, Dataset]:
    """Seeded (train, validation) partition.

    Validation gets ``floor(f_val * N)`` samples; train gets the rest of the
    ``floor((f_train + f_val) * N)`` samples in use, so rounding remainders
    land in train. Each side keeps the original sample order.
    """
    f_train, f_val = fractions
    if f_train <= 0 or f_val <= 0 or f_train + f_val > 1 + 1e-12:
        raise BadFractions(f"fractions must be positive with sum <= 1, got {fractions}")
    n = len(d)
    if n == 0:
        raise EmptyDataset("cannot split an empty dataset")

    # 1e-9 guards against 0.7 + 0.2 = 0.8999999
    used = min(n, math.floor((f_train + f_val) * n + 1e-9))
    n_val = math.floor(f_val * n + 1e-9)
    n_train = used - n_val

    order = list(range(n))
    random.Random(seed).shuffle(order)
    val_idx = sorted(order[:n_val])
    train_idx = sorted(order[n_val : n_val + n_train])
    train = Dataset(d.task_id, tuple(d.samples[i] for i in train_idx), "train")
    val = Dataset(d.task_id, tuple(d.samples[i] for i in val_idx), "validation")
    return train, val
