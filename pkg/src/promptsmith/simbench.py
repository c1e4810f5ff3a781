"""Synthetic reward landscapes over strategy combos.

A landscape assigns each ordered, repetition-free combo a reward in [0, 1]:

    r(c) = base + sum_i effect[c_i] + sum_{i<j} pair[{c_i, c_j}] + sum_{i<j} order[c_i, c_j]

so single strategies matter, some pairs work better together than apart,
and the order inside a pair matters a little. A *reference* landscape is the
same structure with every term perturbed; it plays the stored memory of a
related task, and the perturbation scale stands in for task similarity.

:class:`SimWorld` wires a landscape to simulated inference and optimizer
models so the full pipeline (compose, evaluate, refine) can run offline.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Literal, Mapping, Sequence

import numpy as np

from .backends import CompletionRequest, Model, ModelRef, SimulatedBackend, TraceLog
from .data import Dataset, Sample, Task
from .errors import ConfigError, Transport
from .memory import MemoryKey, MemoryModule
from .rws import PromptEvaluator, SearchConfig, enumerate_combos, eps_greedy_core, exhaustive_core, seed_target
from .strategies import BUILTIN_IDS, Combo, StrategyPool, builtin_pool

# default transfer difficulty for the warm method; picked with
# scripts/transfer_sweep.py (see the README for the sweep table)
DEFAULT_PERTURBATION = 0.25
REFINE_MARKER = "<<refine>>"


def rho_for(scale: float) -> float:
    """Nominal similarity of a reference perturbed at ``scale``."""
    return 1.0 / (1.0 + scale)


@dataclass(frozen=True)
class LandscapeParams:
    pool_size: int = 8
    max_depth: int = 2
    base: float = 0.35
    effect_mean: float = 0.03
    effect_sd: float = 0.08
    pair_sd: float = 0.04
    order_sd: float = 0.02
    noise_sd: float = 0.0
    strategy_ids: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.pool_size < 1:
            raise ValueError("pool_size must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        if self.strategy_ids is not None and len(self.strategy_ids) != self.pool_size:
            raise ValueError("strategy_ids must have pool_size entries")

    @property
    def ids(self) -> tuple[str, ...]:
        if self.strategy_ids is not None:
            return tuple(self.strategy_ids)
        if self.pool_size <= len(BUILTIN_IDS):
            return BUILTIN_IDS[: self.pool_size]
        return tuple(f"S{i}" for i in range(self.pool_size))

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> LandscapeParams:
        d = dict(d)
        if d.get("strategy_ids") is not None:
            d["strategy_ids"] = tuple(d["strategy_ids"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strategy_ids"] = list(self.ids)
        return d


class Landscape:
    def __init__(self, params: LandscapeParams, seed: int, effect: np.ndarray, pair: np.ndarray, order: np.ndarray):
        self.params = params
        self.seed = seed
        self.ids = params.ids
        self._index = {s: i for i, s in enumerate(self.ids)}
        self.effect, self.pair, self.order = effect, pair, order
        self.combos: list[Combo] = enumerate_combos(self.ids, params.max_depth)
        self._cache: dict[Combo, float] = {}

    def reward(self, combo: Sequence[str]) -> float:
        """Noiseless reward; defined for any repetition-free combo over the landscape's ids."""
        combo = tuple(combo)
        hit = self._cache.get(combo)
        if hit is not None:
            return hit
        idx = [self._index[s] for s in combo]
        if len(set(idx)) != len(idx):
            raise ValueError(f"combo repeats a strategy: {combo}")
        r = self.params.base + float(sum(self.effect[i] for i in idx))
        for a, b in itertools.combinations(idx, 2):
            r += float(self.pair[min(a, b), max(a, b)] + self.order[a, b])
        r = min(1.0, max(0.0, r))
        self._cache[combo] = r
        return r

    def query(self, combo: Sequence[str], rng: np.random.Generator | None = None) -> float:
        r = self.reward(combo)
        if self.params.noise_sd and rng is not None:
            r = min(1.0, max(0.0, r + float(rng.normal(0.0, self.params.noise_sd))))
        return r

    def table(self) -> dict[Combo, float]:
        return {c: self.reward(c) for c in self.combos}

    def perturbed(self, scale: float, seed: int) -> Landscape:
        """Same family, every term shifted by ``scale`` times its own spread."""
        if scale < 0:
            raise ValueError("scale must be >= 0")
        p, n = self.params, self.params.pool_size
        rng = np.random.default_rng(seed)
        effect = self.effect + scale * rng.normal(0.0, p.effect_sd, n)
        pair = self.pair + scale * np.triu(rng.normal(0.0, p.pair_sd, (n, n)), 1)
        order = self.order + scale * _offdiag(rng.normal(0.0, p.order_sd, (n, n)))
        return Landscape(p, seed, effect, pair, order)


def _offdiag(a: np.ndarray) -> np.ndarray:
    return a - np.diag(np.diag(a))


def make_landscape(params: LandscapeParams, seed: int) -> Landscape:
    n = params.pool_size
    rng = np.random.default_rng(seed)
    effect = rng.normal(params.effect_mean, params.effect_sd, n)
    pair = np.triu(rng.normal(0.0, params.pair_sd, (n, n)), 1)
    order = _offdiag(rng.normal(0.0, params.order_sd, (n, n)))
    return Landscape(params, seed, effect, pair, order)


def exhaustive_best(land: Landscape) -> tuple[Combo, float]:
    """Noiseless argmax over every combo; ties go to the earlier combo in canonical order."""
    best_c, best_r = land.combos[0], land.reward(land.combos[0])
    for c in land.combos[1:]:
        r = land.reward(c)
        if r > best_r:
            best_c, best_r = c, r
    return best_c, best_r


# -- comparison ------------------------------------------------------------

MethodKind = Literal["cold_exhaustive", "warm_eps_greedy"]


@dataclass(frozen=True)
class MethodSpec:
    kind: MethodKind
    search: SearchConfig = field(default_factory=SearchConfig)
    perturbation: float = DEFAULT_PERTURBATION
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("cold_exhaustive", "warm_eps_greedy"):
            raise ConfigError(f"unknown bench method {self.kind!r}")
        if not self.name:
            object.__setattr__(self, "name", self.kind)

    @property
    def rho(self) -> float | None:
        return rho_for(self.perturbation) if self.kind == "warm_eps_greedy" else None

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> MethodSpec:
        d = dict(d)
        kind = d.pop("kind")
        name = d.pop("name", "")
        pert = float(d.pop("perturbation", DEFAULT_PERTURBATION))
        return cls(kind, SearchConfig(**d), pert, name)

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"name": self.name, "kind": self.kind}
        if self.kind == "warm_eps_greedy":
            s = self.search
            d.update(epsilon=s.epsilon, k=s.k, budget=s.budget, perturbation=self.perturbation, rho=self.rho)
        return d


def default_methods() -> list[MethodSpec]:
    return [MethodSpec("cold_exhaustive"), MethodSpec("warm_eps_greedy")]


@dataclass(frozen=True)
class BenchRow:
    trial: int
    method: str
    seed: int
    rho: float | None
    evaluations_used: int
    best_combo: Combo
    best_reward: float
    oracle_best: float
    regret: float
    curve: tuple[float, ...]  # regret after each evaluation

    CSV_FIELDS = ("trial", "method", "seed", "rho", "evaluations_used", "best_combo",
                  "best_reward", "oracle_best", "regret")

    def csv_row(self) -> list:
        rho = "" if self.rho is None else f"{self.rho:.6f}"
        return [self.trial, self.method, self.seed, rho, self.evaluations_used, "+".join(self.best_combo),
                f"{self.best_reward:.6f}", f"{self.oracle_best:.6f}", f"{self.regret:.6f}"]


def _regret_curve(land: Landscape, steps, oracle: float) -> tuple[float, ...]:
    out, best_obs, best_true = [], -1.0, 0.0
    for s in steps:
        if s.reward > best_obs:
            best_obs, best_true = s.reward, land.reward(s.combo)
        out.append(oracle - best_true)
    return tuple(out)


def run_trial(params: LandscapeParams, methods: Sequence[MethodSpec], seed: int, trial: int) -> list[BenchRow]:
    """One landscape, every method. Rewards go into memory exactly as the real search would see them."""
    land_seed, ref_seed, search_seed, noise_seed = (
        int(x) for x in np.random.SeedSequence([seed, trial]).generate_state(4))
    land = make_landscape(params, land_seed)
    _, oracle = exhaustive_best(land)
    rows = []
    for m in methods:
        noise = np.random.default_rng(noise_seed)
        target = MemoryKey("target", "sim")
        memory = MemoryModule()

        def evaluate(combo: Combo) -> float:
            return land.query(combo, noise)

        if m.kind == "cold_exhaustive":
            trace = exhaustive_core(land.combos, evaluate, memory, target)
        else:
            ref = land.perturbed(m.perturbation, ref_seed)
            ref_key = MemoryKey("reference", "sim")
            exhaustive_core(ref.combos, ref.reward, memory, ref_key)
            seed_target(memory, target, ref_key, m.rho, land.combos)
            trace = eps_greedy_core(evaluate, memory, target, replace(m.search, seed=search_seed))
        curve = _regret_curve(land, trace.steps, oracle)
        combo, _ = trace.best
        true_best = land.reward(combo)
        rows.append(BenchRow(trial, m.name, land_seed, m.rho, trace.evaluations_used, combo, true_best, oracle,
                             oracle - true_best, curve))
    return rows


@dataclass
class BenchReport:
    params: LandscapeParams
    methods: list[MethodSpec]
    trials: int
    seed: int
    rows: list[BenchRow] = field(default_factory=list)

    def method_rows(self, name: str) -> list[BenchRow]:
        return [r for r in self.rows if r.method == name]

    def success_rate(self, name: str, tol: float = 0.02) -> float:
        rows = self.method_rows(name)
        return sum(r.regret <= tol for r in rows) / len(rows)

    def aggregate(self, tol: float = 0.02) -> list[dict]:
        out = []
        for m in self.methods:
            rows = self.method_rows(m.name)
            ev = [r.evaluations_used for r in rows]
            reg = [r.regret for r in rows]
            best = [r.best_reward for r in rows]
            out.append({
                "method": m.name,
                "rho": m.rho,
                "evaluations_mean": statistics.fmean(ev),
                "evaluations_sd": statistics.pstdev(ev),
                "best_reward_mean": statistics.fmean(best),
                "regret_mean": statistics.fmean(reg),
                "regret_sd": statistics.pstdev(reg),
                "regret_max": max(reg),
                f"share_regret_le_{tol}": self.success_rate(m.name, tol),
            })
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(BenchRow.CSV_FIELDS)
        for r in self.rows:
            w.writerow(r.csv_row())
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "seed": self.seed,
            "landscape": self.params.to_dict(),
            "methods": [m.to_dict() for m in self.methods],
            "summary": self.aggregate(),
            "rows": [{k: getattr(r, k) for k in BenchRow.CSV_FIELDS} for r in self.rows],
        }

    def table(self) -> str:
        head = f"{'method':<18} {'rho':>6} {'evals':>12} {'best':>8} {'regret':>16} {'<=0.02':>7}"
        lines = [head, "-" * len(head)]
        for a in self.aggregate():
            rho = "-" if a["rho"] is None else f"{a['rho']:.3f}"
            lines.append(
                f"{a['method']:<18} {rho:>6} {a['evaluations_mean']:>6.1f}±{a['evaluations_sd']:<5.1f}"
                f"{a['best_reward_mean']:>8.4f} {a['regret_mean']:>8.4f}±{a['regret_sd']:<7.4f}"
                f"{a['share_regret_le_0.02']:>7.0%}")
        return "\n".join(lines)

    def plot_svg(self, path: str | Path) -> Path:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6, 4))
        for m in self.methods:
            curves = [r.curve for r in self.method_rows(m.name) if r.curve]
            if not curves:
                continue
            n = max(len(c) for c in curves)
            padded = np.array([list(c) + [c[-1]] * (n - len(c)) for c in curves])
            ax.plot(np.arange(1, n + 1), padded.mean(axis=0), label=m.name)
        ax.set_xlabel("evaluations")
        ax.set_ylabel("mean regret")
        ax.set_yscale("symlog", linthresh=0.01)
        ax.legend()
        fig.tight_layout()
        path = Path(path)
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        return path


def _trial_job(args):
    return run_trial(*args)


def run_comparison(
    params: LandscapeParams,
    methods: Sequence[MethodSpec] | None = None,
    trials: int = 100,
    seed: int = 0,
    workers: int = 1,
) -> BenchReport:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    methods = list(methods or default_methods())
    names = [m.name for m in methods]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate method names {names}")
    jobs = [(params, methods, seed, t) for t in range(trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            per_trial = list(ex.map(_trial_job, jobs))
    else:
        per_trial = [_trial_job(j) for j in jobs]
    report = BenchReport(params, methods, trials, seed)
    for rows in per_trial:
        report.rows.extend(rows)
    return report


@dataclass
class BenchConfig:
    landscape: LandscapeParams = field(default_factory=LandscapeParams)
    methods: list[MethodSpec] = field(default_factory=default_methods)
    trials: int = 100
    seed: int = 0
    workers: int = 1

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> BenchConfig:
        try:
            return cls(
                landscape=LandscapeParams.from_dict(d.get("landscape", {})),
                methods=[MethodSpec.from_dict(m) for m in d["methods"]] if "methods" in d else default_methods(),
                trials=int(d.get("trials", 100)),
                seed=int(d.get("seed", 0)),
                workers=int(d.get("workers", 1)),
            )
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"bad bench config: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> BenchConfig:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def run(self) -> BenchReport:
        return run_comparison(self.landscape, self.methods, self.trials, self.seed, self.workers)


# -- simulated task world --------------------------------------------------


def realized_correct(reward: float, n: int) -> int:
    """Number of correct samples that realizes ``reward`` on ``n`` samples (half rounds up)."""
    return min(n, max(0, math.floor(reward * n + 0.5)))


class SimWorld:
    """A classification task whose simulated models answer according to a landscape.

    The inference model reads the combo off the prompt text: suffix
    strategies leave their template text, and the simulated optimizer marks
    rewrites with ``<<StrategyId>>``. Each refinement adds ``<<refine>>``,
    worth ``refine_bonus`` reward. The reward is realized as a fixed
    per-sample correctness order, so accuracy is ``round(reward * n) / n``.
    """

    ANALYSIS = {"Error Causes": "The model confuses neighbouring classes.",
                "Improvement Methods": "State the decision criteria for each class explicitly."}

    def __init__(
        self,
        landscape: Landscape,
        n_samples: int = 50,
        labels: Sequence[str] = ("positive", "negative", "neutral"),
        refine_bonus: float = 0.05,
        task_id: str = "sim-task",
        pool: StrategyPool | None = None,
    ):
        if n_samples < 1 or len(labels) < 2:
            raise ValueError("need n_samples >= 1 and at least two labels")
        self.landscape = landscape
        self.refine_bonus = refine_bonus
        base = pool or builtin_pool()
        missing = [s for s in landscape.ids if s not in base]
        if missing:
            raise ConfigError(f"landscape strategies {missing} are not in the pool")
        self.pool = StrategyPool(base[s] for s in landscape.ids)
        self.task = Task(
            task_id=task_id,
            name=f"synthetic task {task_id}",
            category="classification",
            initial_prompt="Classify the sentiment of the item. Answer with one of: " + ", ".join(labels) + ".",
            label_set=tuple(labels),
            description="synthetic classification task driven by a reward landscape",
        )
        samples = tuple(Sample(f"s{i:03d}", labels[i % len(labels)]) for i in range(n_samples))
        self.dataset = Dataset(task_id, samples, "validation")
        order = np.random.default_rng(landscape.seed).permutation(n_samples)
        self._rank = {samples[int(j)].sample_id: r for r, j in enumerate(order)}
        self._index = {s.sample_id: i for i, s in enumerate(samples)}

    def decode(self, text: str) -> tuple[Combo, int]:
        found = []
        for s in self.pool:
            marker = f"<<{s.strategy_id}>>" if s.mode == "rewrite" else s.template
            pos = text.find(marker)
            if pos != -1:
                found.append((pos, s.strategy_id))
        return tuple(sid for _, sid in sorted(found)), text.count(REFINE_MARKER)

    def reward_of(self, text: str) -> float:
        combo, refines = self.decode(text)
        return min(1.0, self.landscape.reward(combo) + self.refine_bonus * refines)

    def inference(self, req: CompletionRequest) -> str:
        sid = req.context.get("sample_id", "")
        if sid not in self._index:
            raise Transport(None, f"unknown sample {sid!r}")
        labels = self.task.label_set
        i = self._index[sid]
        gold = self.dataset.samples[i].gold_label
        if self._rank[sid] < realized_correct(self.reward_of(req.user_text), len(self._index)):
            return f"{gold}."
        if i % 5 == 4:
            return "I cannot decide from this input."
        g = labels.index(gold)
        return labels[(g + 1 + i % (len(labels) - 1)) % len(labels)]

    def optimizer(self, req: CompletionRequest) -> str:
        purpose = req.context.get("purpose", "")
        prompt = req.context.get("prompt", "")
        if purpose.startswith("strategy:"):
            return f"{prompt}\n<<{purpose.split(':', 1)[1]}>>"
        if purpose == "rewrite":
            return f"{prompt}\n{REFINE_MARKER}"
        if purpose == "error_analysis":
            return "```json\n" + json.dumps(self.ANALYSIS) + "\n```"
        if purpose == "similarity":
            return "0.5"
        raise Transport(None, f"simulated optimizer has no answer for purpose {purpose!r}")

    def models(self, trace: TraceLog | None = None, seed: int | None = None,
               inference_id: str = "sim-small", optimizer_id: str = "sim-large") -> tuple[Model, Model]:
        trace = trace or TraceLog()
        inf = Model(ModelRef(inference_id, "inference", parallelism_limit=1),
                    SimulatedBackend(self.inference, trace), seed)
        opt = Model(ModelRef(optimizer_id, "optimizer", parallelism_limit=1),
                    SimulatedBackend(self.optimizer, trace), seed)
        return inf, opt

    def expected_accuracy(self, text: str) -> Fraction:
        n = len(self._index)
        return Fraction(realized_correct(self.reward_of(text), n), n)


def make_world(params: LandscapeParams, seed: int, **kw) -> SimWorld:
    return SimWorld(make_landscape(params, seed), **kw)


# -- two-stage ablation ----------------------------------------------------


@dataclass(frozen=True)
class AblationRow:
    trial: int
    seed: int
    baseline: float
    rws_only: float
    full: float


def ablation_trial(params: LandscapeParams, seed: int, trial: int, eso_iterations: int = 2,
                   n_samples: int = 50, refine_bonus: float = 0.05) -> AblationRow:
    """Baseline prompt vs. best searched combo vs. searched combo plus refinement, on one world."""
    from .eso import EsoConfig, run_eso

    land_seed = int(np.random.SeedSequence([seed, trial]).generate_state(1)[0])
    world = make_world(params, land_seed, n_samples=n_samples, refine_bonus=refine_bonus)
    inf, opt = world.models(seed=land_seed)
    evaluator = PromptEvaluator(world.task, world.dataset, inf, opt, world.pool)
    memory = MemoryModule()
    trace = exhaustive_core(world.landscape.combos, evaluator, memory, MemoryKey(world.task.task_id, "sim-small"))
    baseline = float(evaluator.results[()].accuracy)
    combo, rws_best = trace.best
    run = run_eso(evaluator.candidate(combo), world.task, world.dataset, inf, opt,
                  EsoConfig(max_iterations=eso_iterations), initial_eval=evaluator.results[combo])
    return AblationRow(trial, land_seed, baseline, float(rws_best), run.best[1])


def run_ablation(params: LandscapeParams | None = None, trials: int = 50, seed: int = 0, **kw) -> list[AblationRow]:
    params = params or LandscapeParams()
    return [ablation_trial(params, seed, t, **kw) for t in range(trials)]
