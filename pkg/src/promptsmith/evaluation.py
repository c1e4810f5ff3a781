"""0-1 scoring, accuracy and confusion buckets for one prompt on one dataset."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .backends import FailedOutput, Model, batch_infer
from .data import Dataset
from .errors import EmptyDataset, GoldNotInLabelSet
from .labels import UNPARSED, match_label, normalize_answer
from .strategies import PromptCandidate

__all__ = [
    "UNPARSED",
    "normalize_answer",
    "SampleRecord",
    "ErrorDistribution",
    "EvalResult",
    "score_sample",
    "compute_error_distribution",
    "evaluate_prompt",
]


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    raw_output: str
    predicted_label: str
    gold_label: str
    score: int
    error: str | None = None

    def to_dict(self) -> dict:
        d = {
            "sample_id": self.sample_id,
            "raw_output": self.raw_output,
            "predicted_label": self.predicted_label,
            "gold_label": self.gold_label,
            "score": self.score,
        }
        if self.error is not None:
            d["error"] = self.error
        return d


@dataclass(frozen=True)
class ErrorDistribution:
    buckets: dict[tuple[str, str], int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.buckets.values())

    def ranked(self) -> list[tuple[tuple[str, str], int]]:
        """Buckets by count (descending), then by (gold, predicted)."""
        return sorted(self.buckets.items(), key=lambda kv: (-kv[1], kv[0]))

    def describe(self) -> str:
        if not self.buckets:
            return "no errors"
        return "\n".join(f"gold {g!r} -> predicted {p!r}: {n}" for (g, p), n in self.ranked())

    def to_list(self) -> list[dict]:
        return [{"gold": g, "predicted": p, "count": n} for (g, p), n in self.ranked()]


def compute_error_distribution(records: Iterable[SampleRecord]) -> ErrorDistribution:
    counts = Counter((r.gold_label, r.predicted_label) for r in records if r.score == 0)
    return ErrorDistribution(dict(counts))


def score_sample(raw: str, gold: str, label_set: Sequence[str], sample_id: str = "") -> SampleRecord:
    canonical_gold = match_label(gold, label_set)
    if canonical_gold is None:
        raise GoldNotInLabelSet(f"gold label {gold!r} not in {list(label_set)}")
    predicted = normalize_answer(raw, label_set)
    score = int(predicted != UNPARSED and predicted == canonical_gold)
    return SampleRecord(sample_id, raw, predicted, canonical_gold, score)


@dataclass(frozen=True)
class EvalResult:
    prompt: PromptCandidate
    dataset_tag: str
    records: tuple[SampleRecord, ...]
    accuracy: float
    error_distribution: ErrorDistribution

    @property
    def correct(self) -> int:
        return sum(r.score for r in self.records)

    @property
    def errors(self) -> list[SampleRecord]:
        return [r for r in self.records if r.score == 0]

    def summary(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "correct": self.correct,
            "n": len(self.records),
            "error_distribution": self.error_distribution.to_list(),
        }

    def to_dict(self) -> dict:
        return {
            "prompt": self.prompt.to_dict(),
            "dataset_tag": self.dataset_tag,
            **self.summary(),
            "records": [r.to_dict() for r in self.records],
        }


def evaluate_prompt(
    prompt: PromptCandidate,
    d: Dataset,
    model: Model,
    label_set: Sequence[str],
    history: list[EvalResult] | None = None,
) -> EvalResult:
    """Run the inference model over ``d`` and score every answer.

    Failed calls count as wrong answers with an ``UNPARSED`` prediction and
    the error attached to the record. The result is appended to ``history``
    when one is given.
    """
    if len(d) == 0:
        raise EmptyDataset("cannot evaluate on an empty dataset")
    outputs = batch_infer(prompt, d.samples, model)
    records = []
    for sample, out in zip(d.samples, outputs):
        if isinstance(out, FailedOutput):
            records.append(SampleRecord(sample.sample_id, "", UNPARSED, sample.gold_label, 0, out.error))
        else:
            records.append(score_sample(out, sample.gold_label, label_set, sample.sample_id))
    records_t = tuple(records)
    result = EvalResult(
        prompt=prompt,
        dataset_tag=f"{d.task_id}:{d.split_tag}",
        records=records_t,
        accuracy=sum(r.score for r in records_t) / len(records_t),
        error_distribution=compute_error_distribution(records_t),
    )
    if history is not None:
        history.append(result)
    return result
