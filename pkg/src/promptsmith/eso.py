"""Error-driven prompt refinement.

Each round evaluates the current prompt, picks a handful of wrong answers,
asks the optimizer model why they went wrong, and asks it again for a
revised prompt given every round so far. The best prompt seen is kept.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

from .backends import Model, extract_structured
from .data import Dataset, MediaRef, Task
from .errors import (
    AnalysisUnparseable,
    EmptyRewrite,
    MissingKeys,
    NoJsonFound,
    PromptsmithError,
    RunAborted,
)
from .evaluation import ErrorDistribution, EvalResult, evaluate_prompt
from .labels import UNPARSED
from .strategies import Combo, PromptCandidate, combo_label
from .templates import (
    ERROR_ANALYSIS,
    ERROR_SUMMARY,
    FORMAT_REMINDER,
    fill_template,
    load_template,
)

ANALYSIS_KEYS = ("Error Causes", "Improvement Methods")

StopReason = Literal["max_iterations", "perfect_accuracy", "no_errors", "error"]


@dataclass
class EsoConfig:
    max_iterations: int = 2
    n_bad_cases: int = 5
    excerpt_chars: int = 500

    def __post_init__(self):
        if self.max_iterations < 0 or self.n_bad_cases < 1:
            raise ValueError("max_iterations must be >= 0 and n_bad_cases >= 1")


@dataclass(frozen=True)
class BadCase:
    sample_id: str
    media: tuple[MediaRef, ...]
    gold_label: str
    predicted_label: str
    raw_excerpt: str

    def describe(self) -> str:
        pred = "(no valid option)" if self.predicted_label == UNPARSED else self.predicted_label
        return (f"sample {self.sample_id}: ground truth = {self.gold_label}; model answer = {pred}; "
                f"raw output = {self.raw_excerpt!r}")


@dataclass(frozen=True)
class ErrorAnalysis:
    error_causes: str
    improvement_methods: str
    source_prompt_version: int

    def describe(self) -> str:
        return f"Error Causes: {self.error_causes}\nImprovement Methods: {self.improvement_methods}"


@dataclass(frozen=True)
class RoundSummary:
    prompt_text: str
    accuracy: float
    error_distribution: str

    @classmethod
    def of(cls, ev: EvalResult) -> RoundSummary:
        return cls(ev.prompt.text, ev.accuracy, ev.error_distribution.describe())


@dataclass
class Iteration:
    prompt: PromptCandidate
    eval: EvalResult
    analysis: ErrorAnalysis | None = None

    def to_dict(self) -> dict:
        return {
            "prompt": self.prompt.to_dict(),
            "eval": self.eval.to_dict(),
            "analysis": None if self.analysis is None else {
                "error_causes": self.analysis.error_causes,
                "improvement_methods": self.analysis.improvement_methods,
                "source_prompt_version": self.analysis.source_prompt_version,
            },
        }


@dataclass
class OptimizationRun:
    task_id: str
    iterations: list[Iteration] = field(default_factory=list)
    stopped_reason: StopReason | None = None
    error: str | None = None

    @property
    def best(self) -> tuple[PromptCandidate, float]:
        """Highest-accuracy prompt; ties go to the earliest iteration."""
        top = max(self.iterations, key=lambda it: it.eval.accuracy)
        return top.prompt, top.eval.accuracy

    @property
    def rewrites(self) -> int:
        return len(self.iterations) - 1

    def to_dict(self) -> dict:
        prompt, acc = self.best
        return {
            "task_id": self.task_id,
            "stopped_reason": self.stopped_reason,
            "error": self.error,
            "best": {"prompt": prompt.to_dict(), "accuracy": acc},
            "iterations": [it.to_dict() for it in self.iterations],
        }


def select_bad_cases(ev: EvalResult, d: Dataset, n: int = 5, excerpt_chars: int = 500) -> list[BadCase]:
    """Pick up to ``n`` wrong answers, cycling over confusion buckets.

    Buckets are visited largest first and the cycle repeats until ``n``
    cases are taken, so every confusion pair is represented before any
    bucket gives a second case, and large buckets keep contributing after
    small ones run dry. Within a bucket, cases come in record order.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    errors = ev.errors
    if len(errors) <= n:
        chosen = errors
    else:
        queues = {}
        for r in errors:
            queues.setdefault((r.gold_label, r.predicted_label), []).append(r)
        order = [key for key, _ in ErrorDistribution({k: len(v) for k, v in queues.items()}).ranked()]
        cursors = dict.fromkeys(order, 0)
        chosen = []
        while len(chosen) < n:
            for key in order:
                if len(chosen) == n:
                    break
                if cursors[key] < len(queues[key]):
                    chosen.append(queues[key][cursors[key]])
                    cursors[key] += 1
    samples = d.by_id()
    out = []
    for r in chosen:
        media = samples[r.sample_id].media if r.sample_id in samples else ()
        out.append(BadCase(r.sample_id, media, r.gold_label, r.predicted_label, r.raw_output[:excerpt_chars]))
    return out


def analysis_request(prompt: PromptCandidate, combo: Combo, errdist: ErrorDistribution, cases: Sequence[BadCase]) -> str:
    return fill_template(
        load_template(ERROR_ANALYSIS),
        prompt=prompt.text,
        strategies=combo_label(combo),
        error_distribution=errdist.describe(),
        error_cases="\n".join(f"{i}. {c.describe()}" for i, c in enumerate(cases, start=1)),
    )


def analyze_errors(
    prompt: PromptCandidate,
    combo: Combo,
    errdist: ErrorDistribution,
    cases: Sequence[BadCase],
    optimizer: Model,
) -> ErrorAnalysis:
    """Ask the optimizer for error causes and fixes; one retry if the reply will not parse."""
    if not cases:
        raise ValueError("error analysis needs at least one bad case")
    request = analysis_request(prompt, combo, errdist, cases)
    media = tuple(m for c in cases for m in c.media)
    attempts = [request, request + "\n\n" + load_template(FORMAT_REMINDER)]
    last = ""
    for text in attempts:
        last = optimizer.ask(text, media, context={"purpose": "error_analysis", "prompt": prompt.text})
        try:
            parsed = extract_structured(last, ANALYSIS_KEYS)
        except (NoJsonFound, MissingKeys):
            continue
        causes, methods = parsed[ANALYSIS_KEYS[0]].strip(), parsed[ANALYSIS_KEYS[1]].strip()
        if causes and methods:
            return ErrorAnalysis(causes, methods, prompt.eso_iteration)
    raise AnalysisUnparseable(f"could not parse error analysis: {last[:200]!r}")


def format_history(history: Sequence[RoundSummary]) -> str:
    if not history:
        return "(no previous rounds)"
    blocks = []
    for i, h in enumerate(history):
        blocks.append(f"Round {i}:\nPrompt:\n{h.prompt_text}\nAccuracy: {h.accuracy:.4f}\n"
                      f"Error distribution:\n{h.error_distribution}")
    return "\n\n".join(blocks)


def summary_request(history: Sequence[RoundSummary], current: PromptCandidate, analysis: ErrorAnalysis) -> str:
    return fill_template(
        load_template(ERROR_SUMMARY),
        historical_results=format_history(history),
        prompt=current.text,
        error_analysis_results=analysis.describe(),
    )


_FENCE = re.compile(r"^```[\w-]*[ \t]*\n?(.*?)\n?```$", re.S)
_QUOTES = {'"': '"', "'": "'", "“": "”", "「": "」"}


def clean_rewrite(text: str) -> str:
    s = text.strip()
    m = _FENCE.match(s)
    if m:
        s = m.group(1).strip()
    if len(s) >= 2 and _QUOTES.get(s[0]) == s[-1]:
        s = s[1:-1].strip()
    return s


def rewrite_prompt(
    history: Sequence[RoundSummary],
    current: PromptCandidate,
    analysis: ErrorAnalysis,
    optimizer: Model,
) -> PromptCandidate:
    request = summary_request(history, current, analysis)
    text = clean_rewrite(optimizer.ask(request, context={"purpose": "rewrite", "prompt": current.text}))
    if not text:
        raise EmptyRewrite("optimizer returned an empty prompt")
    note = current.lineage_note + f" > refine#{current.eso_iteration + 1}"
    if text == current.text:
        note += "(unchanged)"
    return replace(current, text=text, eso_iteration=current.eso_iteration + 1, lineage_note=note)


def run_eso(
    initial: PromptCandidate,
    task: Task,
    val: Dataset,
    inference: Model,
    optimizer: Model,
    cfg: EsoConfig | None = None,
    initial_eval: EvalResult | None = None,
) -> OptimizationRun:
    """Refine ``initial`` for at most ``cfg.max_iterations`` rewrites.

    ``initial_eval`` lets the caller hand over an evaluation of ``initial``
    it already has, so the same prompt is not scored twice. The rewrite that
    produces iteration ``i`` sees the summaries of iterations ``0 .. i-1``.
    On a failed analysis or rewrite, :class:`RunAborted` carries the
    partial run.
    """
    cfg = cfg or EsoConfig()
    run = OptimizationRun(task.task_id)
    current = initial
    try:
        ev = initial_eval or evaluate_prompt(current, val, inference, task.label_set)
    except PromptsmithError as exc:
        run.stopped_reason, run.error = "error", f"{type(exc).__name__}: {exc}"
        raise RunAborted(run, exc) from exc
    run.iterations.append(Iteration(current, ev))
    i = 0
    while True:
        if ev.accuracy == 1:
            run.stopped_reason = "perfect_accuracy"
            break
        if cfg.max_iterations <= i:
            run.stopped_reason = "max_iterations"
            break
        cases = select_bad_cases(ev, val, cfg.n_bad_cases, cfg.excerpt_chars)
        if not cases:
            run.stopped_reason = "no_errors"
            break
        try:
            analysis = analyze_errors(current, current.combo, ev.error_distribution, cases, optimizer)
            run.iterations[-1].analysis = analysis
            history = [RoundSummary.of(it.eval) for it in run.iterations]
            current = rewrite_prompt(history, current, analysis, optimizer)
            ev = evaluate_prompt(current, val, inference, task.label_set)
        except PromptsmithError as exc:
            run.stopped_reason, run.error = "error", f"{type(exc).__name__}: {exc}"
            raise RunAborted(run, exc) from exc
        run.iterations.append(Iteration(current, ev))
        i += 1
    return run
