"""Strategy-combo search: exhaustive cold start and memory-seeded epsilon-greedy.

The search loops only see an *evaluator*, a callable mapping a combo to a
reward in [0, 1]. :class:`PromptEvaluator` is the real one (compose the
prompt, run it on the validation set); the synthetic benchmark plugs in
landscape functions instead, so both exercise the same search code.
"""

from __future__ import annotations

import itertools
import json
import random
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Real
from typing import Callable, Literal, Sequence

from .backends import Model
from .data import Dataset, Task
from .errors import BudgetExceeded, BudgetExhausted, EmptyStats, NoReference
from .evaluation import EvalResult, evaluate_prompt
from .memory import (
    ActionStats,
    MemoryKey,
    MemoryModule,
    Similarity,
    select_reference,
    smooth_distribution,
    top_k,
    update_memory,
)
from .strategies import Combo, PromptCandidate, StrategyPool, compose_combo

ChosenBy = Literal["cold", "exploit", "explore"]
Evaluator = Callable[[Combo], Real]

# a warm run stops after this many draws per unit of budget even if
# duplicates keep it from spending the budget
DRAWS_PER_BUDGET = 50


@dataclass
class SearchConfig:
    epsilon: float = 0.3
    k: int = 3
    max_depth: int = 2
    budget: int = 15
    seed: int = 0
    strict: bool = False  # cold start refuses to exceed ``budget``

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")
        if self.k < 1 or self.max_depth < 1:
            raise ValueError("k and max_depth must be >= 1")


@dataclass(frozen=True)
class SearchStep:
    combo: Combo
    reward: float
    chosen_by: ChosenBy
    exploit_set: tuple[Combo, ...] = ()  # top-k at selection time (warm search)

    def to_dict(self) -> dict:
        return {
            "combo": list(self.combo),
            "reward": self.reward,
            "chosen_by": self.chosen_by,
            "exploit_set": [list(c) for c in self.exploit_set],
        }


@dataclass
class SearchTrace:
    mode: Literal["cold", "warm"]
    steps: list[SearchStep] = field(default_factory=list)
    reference: dict | None = None
    draws: int = 0
    stop_reason: str = ""

    @property
    def evaluations_used(self) -> int:
        return len(self.steps)

    @property
    def best(self) -> tuple[Combo, float]:
        """Highest reward; ties go to the earliest step."""
        if not self.steps:
            raise ValueError("empty trace")
        best = max(self.steps, key=lambda s: s.reward)  # max keeps the first maximum
        return best.combo, best.reward

    def running_best(self) -> list[float]:
        return list(itertools.accumulate((s.reward for s in self.steps), max))

    def summary(self) -> dict:
        combo, reward = self.best
        return {
            "mode": self.mode,
            "best": {"combo": list(combo), "reward": reward},
            "evaluations_used": self.evaluations_used,
            "draws": self.draws,
            "stop_reason": self.stop_reason,
            "reference": self.reference,
        }

    def to_jsonl(self) -> str:
        lines = [json.dumps({"step": i, **s.to_dict()}) for i, s in enumerate(self.steps)]
        return "".join(line + "\n" for line in lines)


def enumerate_combos(pool: StrategyPool | Sequence[str], max_depth: int) -> list[Combo]:
    """All repetition-free ordered combos of length 0..max_depth, by length then lexicographically."""
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    ids = sorted(pool.ids if isinstance(pool, StrategyPool) else pool)
    out: list[Combo] = []
    for n in range(0, min(max_depth, len(ids)) + 1):
        out.extend(itertools.permutations(ids, n))
    return out


def select_action(stats: Sequence[ActionStats], cfg: SearchConfig, rng: random.Random) -> tuple[Combo, ChosenBy]:
    """Epsilon-greedy draw: a uniform top-k pick, or (with prob. epsilon) a uniform pick outside it."""
    if not stats:
        raise EmptyStats("nothing to select from")
    exploit = top_k(stats, cfg.k)
    exploit_set = set(exploit)
    rest = sorted(s.action for s in stats if s.action not in exploit_set)
    if rest and rng.random() < cfg.epsilon:
        return rng.choice(rest), "explore"
    return rng.choice(exploit), "exploit"


# -- search cores ----------------------------------------------------------


def exhaustive_core(combos: Sequence[Combo], evaluate: Evaluator, memory: MemoryModule, key: MemoryKey) -> SearchTrace:
    trace = SearchTrace("cold")
    for combo in combos:
        reward = evaluate(combo)
        update_memory(memory, key, combo, reward)
        trace.steps.append(SearchStep(combo, float(reward), "cold"))
    trace.draws = len(combos)
    trace.stop_reason = "enumerated"
    return trace


def eps_greedy_core(evaluate: Evaluator, memory: MemoryModule, key: MemoryKey, cfg: SearchConfig) -> SearchTrace:
    """Run epsilon-greedy over the memory entry at ``key`` until ``cfg.budget`` new evaluations.

    Re-drawing an already evaluated combo reuses its reward and costs no
    budget. The run also ends when every action has been evaluated or the
    draw limit is hit.
    """
    if cfg.budget < 1:
        raise BudgetExhausted("warm search needs a budget of at least 1 evaluation")
    rng = random.Random(cfg.seed)
    trace = SearchTrace("warm")
    seen: dict[Combo, Real] = {}
    max_draws = DRAWS_PER_BUDGET * cfg.budget
    while True:
        if len(trace.steps) >= cfg.budget:
            trace.stop_reason = "budget"
            break
        stats = memory.stats(key)
        if all(s.action in seen for s in stats):
            trace.stop_reason = "exhausted"
            break
        if trace.draws >= max_draws:
            trace.stop_reason = "draw_limit"
            break
        exploit_set = tuple(top_k(stats, cfg.k))
        combo, how = select_action(stats, cfg, rng)
        trace.draws += 1
        if combo in seen:
            continue
        reward = seen[combo] = evaluate(combo)
        update_memory(memory, key, combo, reward)
        trace.steps.append(SearchStep(combo, float(reward), how, exploit_set))
    return trace


def seed_target(memory: MemoryModule, target: MemoryKey, ref: MemoryKey, rho: float, combos: Sequence[Combo]) -> None:
    """Install the transferred prior for ``target``.

    The reference distribution is smoothed by similarity, restricted to
    combos that exist in the current pool, and padded with any missing combo
    at the smoothed global mean. If the reference *is* the target, its real
    observations are kept as they are.
    """
    if ref.ident == target.ident:
        return
    smoothed = smooth_distribution(memory.stats(ref), rho)
    g = sum((s.mean_reward for s in smoothed), Fraction(0)) / len(smoothed)
    allowed = set(combos)
    kept = {s.action: s for s in smoothed if s.action in allowed}
    stats = [kept.get(c, ActionStats(c, g, 0)) for c in combos]
    memory.put(target, stats)


# -- task-level search -----------------------------------------------------


class PromptEvaluator:
    """Reward = validation accuracy of the combo applied to the task's initial prompt."""

    def __init__(self, task: Task, val: Dataset, inference: Model, optimizer: Model | None, pool: StrategyPool):
        self.task = task
        self.val = val
        self.inference = inference
        self.optimizer = optimizer
        self.pool = pool
        self.base = PromptCandidate.initial(task.initial_prompt)
        self.results: dict[Combo, EvalResult] = {}
        self.history: list[EvalResult] = []
        self._prefixes: dict[Combo, PromptCandidate] = {}

    def candidate(self, combo: Sequence[str]) -> PromptCandidate:
        return compose_combo(self.base, combo, self.pool, self.optimizer, cache=self._prefixes)

    def __call__(self, combo: Combo) -> Fraction:
        result = evaluate_prompt(self.candidate(combo), self.val, self.inference, self.task.label_set, self.history)
        self.results[tuple(combo)] = result
        return Fraction(result.correct, len(result.records))

    @property
    def evaluations(self) -> int:
        return len(self.history)


def target_key(task: Task, inference: Model) -> MemoryKey:
    return MemoryKey(task.task_id, inference.ref.model_id, task.descriptor)


def cold_start_search(
    task: Task,
    val: Dataset,
    inference: Model,
    optimizer: Model | None,
    pool: StrategyPool,
    cfg: SearchConfig,
    memory: MemoryModule,
    evaluator: PromptEvaluator | None = None,
) -> tuple[SearchTrace, MemoryModule]:
    """Evaluate every combo (the bare initial prompt first) and record all rewards."""
    combos = enumerate_combos(pool, cfg.max_depth)
    if cfg.strict and cfg.budget < len(combos):
        raise BudgetExceeded(f"{len(combos)} combos exceed the budget of {cfg.budget}")
    evaluator = evaluator or PromptEvaluator(task, val, inference, optimizer, pool)
    trace = exhaustive_core(combos, evaluator, memory, target_key(task, inference))
    return trace, memory


def warm_search(
    task: Task,
    val: Dataset,
    inference: Model,
    optimizer: Model | None,
    pool: StrategyPool,
    cfg: SearchConfig,
    memory: MemoryModule,
    similarity: Similarity,
    evaluator: PromptEvaluator | None = None,
) -> tuple[SearchTrace, MemoryModule]:
    """Transfer the most similar stored distribution, then search it epsilon-greedily."""
    if cfg.budget < 1:
        raise BudgetExhausted("warm search needs a budget of at least 1 evaluation")
    target = target_key(task, inference)
    found = select_reference(memory, target, similarity)
    if found is None:
        raise NoReference(f"no usable reference in memory for {target.ident}")
    ref, rho = found
    seed_target(memory, target, ref, rho, enumerate_combos(pool, cfg.max_depth))
    evaluator = evaluator or PromptEvaluator(task, val, inference, optimizer, pool)
    trace = eps_greedy_core(evaluator, memory, target, cfg)
    trace.reference = {"task_id": ref.task_id, "model_id": ref.model_id, "rho": rho}
    return trace, memory
