"""Command-line entry points: optimize, evaluate, bench, memory."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Sequence

from .backends import (
    SIMULATED,
    HttpBackend,
    Model,
    ModelRef,
    SimulatedBackend,
    TraceLog,
    scripted,
)
from .config import ModelSpec, RunConfig
from .data import Dataset, Task, load_dataset, load_task, split_dataset
from .errors import (
    BadFractions,
    ConfigError,
    CorruptFile,
    DuplicateSampleId,
    EmptyDataset,
    InvalidTask,
    MalformedLine,
    NoReference,
    PromptsmithError,
    RunAborted,
    SchemaVersionMismatch,
    UnknownLabel,
)
from .eso import OptimizationRun, run_eso
from .evaluation import EvalResult, evaluate_prompt
from .memory import (
    JudgeSimilarity,
    MemoryModule,
    StaticSimilarity,
    atomic_write,
    commit_entries,
    load_memory,
    load_or_new,
    ranked,
    save_memory,
    update_memory,
)
from .rws import PromptEvaluator, SearchTrace, cold_start_search, target_key, warm_search
from .simbench import BenchConfig, LandscapeParams, make_world
from .strategies import PromptCandidate, StrategyPool, builtin_pool

log = logging.getLogger("promptsmith")

EXIT_OK = 0
EXIT_FAILED = 1  # the pipeline started but did not complete
EXIT_CONFIG = 2  # bad arguments, config or input files

INPUT_ERRORS = (ConfigError, InvalidTask, MalformedLine, UnknownLabel, DuplicateSampleId, EmptyDataset,
                BadFractions, CorruptFile, SchemaVersionMismatch, OSError)


def write_json(path: Path, obj: Any) -> None:
    atomic_write(path, json.dumps(obj, indent=2, ensure_ascii=False) + "\n")


# -- optimize --------------------------------------------------------------


@dataclass
class RunReport:
    task_id: str
    seed: int
    mode: str
    baseline: EvalResult | None = None
    trace: SearchTrace | None = None
    eso: OptimizationRun | None = None
    test: EvalResult | None = None
    memory_label: str = ""
    evaluations: int = 0
    optimizer_calls: int = 0
    inference_calls: int = 0
    wall_time_s: float = 0.0
    error: str | None = None

    @property
    def final(self) -> tuple[PromptCandidate, float] | None:
        return self.eso.best if self.eso and self.eso.iterations else None

    def to_dict(self) -> dict:
        final = self.final
        eso_evals = self.eso.rewrites if self.eso else 0
        return {
            "task_id": self.task_id,
            "seed": self.seed,
            "status": "failed" if self.error else "completed",
            "error": self.error,
            "rws": {
                "mode": self.mode,
                **(self.trace.summary() if self.trace and self.trace.steps else {}),
            },
            "baseline_accuracy": self.baseline.accuracy if self.baseline else None,
            "eso": None if self.eso is None else {
                "stopped_reason": self.eso.stopped_reason,
                "accuracies": [it.eval.accuracy for it in self.eso.iterations],
            },
            "final_prompt": final[0].text if final else None,
            "final_candidate": final[0].to_dict() if final else None,
            "final_accuracy": final[1] if final else None,
            "test_accuracy": self.test.accuracy if self.test else None,
            "memory": self.memory_label,
            "totals": {
                "evaluations": self.evaluations,
                "eso_evaluations": eso_evals,
                "optimizer_calls": self.optimizer_calls,
                "inference_calls": self.inference_calls,
                "wall_time_s": round(self.wall_time_s, 3),
            },
        }


def _model(spec: ModelSpec, trace: TraceLog, seed: int) -> Model:
    if spec.ref.simulated:
        return Model(spec.ref, SimulatedBackend(scripted(spec.script), trace), seed)
    return Model(spec.ref, HttpBackend(trace), seed)


def _similarity(cfg: RunConfig, optimizer: Model):
    if cfg.similarity.get("provider") == "judge":
        return JudgeSimilarity(optimizer)
    return StaticSimilarity.from_rows(cfg.similarity.get("rows", []), float(cfg.similarity.get("default", 0.0)))


def _pool(cfg: RunConfig) -> StrategyPool:
    pool = StrategyPool.from_dir(cfg.strategy_dir) if cfg.strategy_dir else builtin_pool()
    return pool.with_modes(cfg.strategy_modes) if cfg.strategy_modes else pool


def _load_world(cfg: RunConfig, trace: TraceLog):
    """(task, validation, test or None, inference, optimizer, pool)."""
    if cfg.simulation is not None:
        sim = dict(cfg.simulation)
        params = LandscapeParams.from_dict(sim.pop("landscape", {}))
        world = make_world(params, int(sim.pop("seed", cfg.seed)), **sim)
        ids = {}
        if cfg.inference:
            ids["inference_id"] = cfg.inference.ref.model_id
        if cfg.optimizer:
            ids["optimizer_id"] = cfg.optimizer.ref.model_id
        inf, opt = world.models(trace, cfg.seed, **ids)
        return world.task, world.dataset, None, inf, opt, world.pool
    task = load_task(cfg.task_path)
    if cfg.validation_path is not None:
        val = load_dataset(cfg.validation_path, task, "validation")
    else:
        _, val = split_dataset(load_dataset(cfg.unsplit_path, task), cfg.fractions, cfg.seed)
    test = load_dataset(cfg.test_path, task, "test") if cfg.test_path else None
    inf = _model(cfg.inference, trace, cfg.seed)
    opt = _model(cfg.optimizer, trace, cfg.seed)
    return task, val, test, inf, opt, _pool(cfg)


def _write_outputs(out: Path, report: RunReport) -> None:
    write_json(out / "run_report.json", report.to_dict())
    atomic_write(out / "search_trace.jsonl", report.trace.to_jsonl() if report.trace else "")
    if report.eso is not None:
        write_json(out / "eso_run.json", report.eso.to_dict())


def cmd_optimize(cfg: RunConfig) -> RunReport:
    """Strategy search, then refinement, then memory and report writes.

    Raises :class:`RunAborted` (carrying the report) if a stage fails after
    the run started; the partial report is on disk by then.
    """
    cfg.validate()
    start = time.monotonic()
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace_log.jsonl").unlink(missing_ok=True)
    trace_log = TraceLog(out / "trace_log.jsonl")
    search = replace(cfg.search, seed=cfg.seed)
    try:
        task, val, test, inf, opt, pool = _load_world(cfg, trace_log)
    except BaseException:
        trace_log.close()
        raise
    report = RunReport(task_id=task.task_id, seed=cfg.seed, mode="", memory_label=cfg.memory_label)
    evaluator = PromptEvaluator(task, val, inf, opt, pool)
    try:
        memory = load_or_new(cfg.memory_path)
        key = target_key(task, inf)
        try:
            if not any(memory.stats(k) for k in memory.keys()):
                raise NoReference("memory is empty")
            report.mode = "warm"
            report.trace, _ = warm_search(task, val, inf, opt, pool, search, memory, _similarity(cfg, opt), evaluator)
        except NoReference as exc:
            log.info("cold start (%s)", exc)
            report.mode = "cold"
            report.trace, _ = cold_start_search(task, val, inf, opt, pool, search, memory, evaluator)
        if () not in evaluator.results:
            update_memory(memory, key, (), evaluator(()))
        report.baseline = evaluator.results[()]
        # search observations are kept even if refinement fails later
        commit_entries(memory, cfg.memory_path, [key.ident])
        # first evaluation with the top accuracy seeds refinement
        start_eval = max(evaluator.history, key=lambda r: r.accuracy)
        report.eso = run_eso(start_eval.prompt, task, val, inf, opt, cfg.eso, initial_eval=start_eval)
        if test is not None:
            report.test = evaluate_prompt(report.final[0], test, inf, task.label_set)
    except RunAborted as exc:
        report.eso = exc.run
        report.error = f"{type(exc.cause).__name__}: {exc.cause}"
    except PromptsmithError as exc:
        report.error = f"{type(exc).__name__}: {exc}"
    finally:
        trace_log.close()
    report.evaluations = evaluator.evaluations + (report.eso.rewrites if report.eso else 0)
    report.optimizer_calls = opt.backend.calls["optimizer"]
    report.inference_calls = inf.backend.calls["inference"]
    report.wall_time_s = time.monotonic() - start
    _write_outputs(out, report)
    if report.error:
        raise RunAborted(report, RuntimeError(report.error))
    return report


# -- evaluate / bench / memory ---------------------------------------------


def cmd_evaluate(task: Task, d: Dataset, prompt_text: str, model: Model) -> EvalResult:
    return evaluate_prompt(PromptCandidate.initial(prompt_text), d, model, task.label_set)


def _eval_model(args) -> Model:
    if args.model_endpoint in ("sim", SIMULATED):
        if not args.sim_script:
            raise ConfigError("--model-endpoint sim needs --sim-script")
        ref = ModelRef(args.model_id, "inference", SIMULATED)
        return Model(ref, SimulatedBackend(scripted(args.sim_script)), args.seed)
    return Model(ModelRef(args.model_id, "inference", args.model_endpoint), HttpBackend(), args.seed)


def _run_optimize(args) -> int:
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.memory:
        cfg.memory_path = Path(args.memory)
        cfg.memory_label = args.memory
    if args.out:
        cfg.out_dir = Path(args.out)
    try:
        report = cmd_optimize(cfg)
    except RunAborted as exc:
        print(f"run failed: {exc.run.error}", file=sys.stderr)
        print(f"partial report: {cfg.out_dir / 'run_report.json'}", file=sys.stderr)
        return EXIT_FAILED
    d = report.to_dict()
    print(f"task {d['task_id']}: {d['rws']['mode']} search, {d['totals']['evaluations']} evaluations")
    print(f"baseline accuracy {d['baseline_accuracy']:.4f} -> final {d['final_accuracy']:.4f}")
    print(f"report: {cfg.out_dir / 'run_report.json'}")
    return EXIT_OK


def _run_evaluate(args) -> int:
    prompt_path = Path(args.prompt)
    if not prompt_path.is_file():
        raise ConfigError(f"prompt file {prompt_path} not found")
    task = load_task(args.task)
    d = load_dataset(args.data, task)
    result = cmd_evaluate(task, d, prompt_path.read_text(encoding="utf-8").strip(), _eval_model(args))
    if args.json:
        print(json.dumps(result.to_dict(), ensure_ascii=False))
    else:
        print(f"accuracy {result.accuracy:.4f} ({result.correct}/{len(result.records)})")
        for (gold, pred), n in result.error_distribution.ranked()[:5]:
            print(f"  {gold} -> {pred}: {n}")
    return EXIT_OK


def _run_bench(args) -> int:
    cfg = BenchConfig.load(args.config) if args.config else BenchConfig()
    if args.trials is not None:
        cfg.trials = args.trials
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    report = cfg.run()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / "bench.csv", report.to_csv())
    write_json(out / "bench.json", report.to_dict())
    if args.plot:
        report.plot_svg(out / "bench.svg")
    print(report.table())
    return EXIT_OK


def _run_memory(args) -> int:
    path = Path(args.file)
    if args.action == "prune":
        if not (args.task and args.model):
            raise ConfigError("memory prune needs --task and --model")
        m = load_or_new(path)
        if m.prune(args.task, args.model):
            save_memory(m, path)
            print(f"pruned {args.task}/{args.model}")
        else:
            log.warning("no memory entry for %s/%s; nothing pruned", args.task, args.model)
        return EXIT_OK
    m = load_memory(path) if path.exists() else MemoryModule()
    if args.action == "export":
        text = json.dumps(m.to_dict(), indent=2, ensure_ascii=False)
        if args.out:
            atomic_write(Path(args.out), text + "\n")
        else:
            print(text)
        return EXIT_OK
    for key in m.keys():
        if args.task and key.task_id != args.task or args.model and key.model_id != args.model:
            continue
        stats = ranked(m.stats(key))
        print(f"{key.task_id} / {key.model_id}  ({len(stats)} actions)")
        for s in stats[: args.k] if args.k else stats:
            combo = " + ".join(s.action) if s.action else "(base prompt)"
            print(f"  {float(s.mean_reward):.4f}  n={s.count:<3d} {combo}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="promptsmith", description="Two-stage prompt optimization.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    o = sub.add_parser("optimize", help="strategy search followed by error-driven refinement")
    o.add_argument("--config", required=True)
    o.add_argument("--seed", type=int)
    o.add_argument("--memory")
    o.add_argument("--out")
    o.set_defaults(func=_run_optimize)

    e = sub.add_parser("evaluate", help="score one prompt on one dataset")
    e.add_argument("--task", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--prompt", required=True, help="file holding the prompt text")
    e.add_argument("--model-endpoint", required=True, help="base URL, or 'sim'")
    e.add_argument("--model-id", default="model")
    e.add_argument("--sim-script", help="echo-label:X, constant:TEXT or a rule file")
    e.add_argument("--seed", type=int)
    e.add_argument("--json", action="store_true")
    e.set_defaults(func=_run_evaluate)

    b = sub.add_parser("bench", help="cold vs warm search on synthetic landscapes")
    b.add_argument("--config")
    b.add_argument("--trials", type=int)
    b.add_argument("--seed", type=int)
    b.add_argument("--workers", type=int)
    b.add_argument("--plot", action="store_true")
    b.add_argument("--out", default=".")
    b.set_defaults(func=_run_bench)

    m = sub.add_parser("memory", help="inspect or edit a memory file")
    m.add_argument("action", choices=["show", "prune", "export"])
    m.add_argument("--file", default="memory.json")
    m.add_argument("--k", type=int)
    m.add_argument("--task")
    m.add_argument("--model")
    m.add_argument("--out")
    m.set_defaults(func=_run_memory)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PromptsmithError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
