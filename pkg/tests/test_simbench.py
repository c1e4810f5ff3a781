import itertools
import json
import math
from fractions import Fraction

import numpy as np
import pytest

from promptsmith.evaluation import UNPARSED, evaluate_prompt
from promptsmith.rws import SearchConfig, enumerate_combos
from promptsmith.simbench import (
    BenchConfig,
    Landscape,
    LandscapeParams,
    MethodSpec,
    ablation_trial,
    exhaustive_best,
    make_landscape,
    make_world,
    realized_correct,
    rho_for,
    run_comparison,
)
from promptsmith.strategies import PromptCandidate, compose_combo


def test_determinism_and_size():
    p = LandscapeParams(pool_size=3)
    a, b = make_landscape(p, 5), make_landscape(p, 5)
    assert a.table() == b.table() and len(a.table()) == 10
    assert make_landscape(p, 6).table() != a.table()
    assert all(0 <= r <= 1 for r in a.table().values())


def test_noise():
    land = make_landscape(LandscapeParams(noise_sd=0.0), 1)
    rng = np.random.default_rng(0)
    assert len({land.query(("Reasoning",), rng) for _ in range(20)}) == 1
    noisy = make_landscape(LandscapeParams(noise_sd=0.05), 1)
    vals = {noisy.query(("Reasoning",), rng) for _ in range(20)}
    assert len(vals) > 1 and all(0 <= v <= 1 for v in vals)
    assert noisy.reward(("Reasoning",)) == land.reward(("Reasoning",))


def test_exhaustive_best_length_fixture():
    p = LandscapeParams(pool_size=4, base=0.0)
    n = p.pool_size
    land = Landscape(p, 0, np.full(n, 0.5), np.zeros((n, n)), np.zeros((n, n)))
    assert exhaustive_best(land) == (("Reasoning", "Reinterpretation"), 1.0)


def test_exhaustive_best_matches_re_enumeration():
    for seed in range(20):
        land = make_landscape(LandscapeParams(), seed)
        combos = [()] + [c for n in (1, 2) for c in itertools.permutations(sorted(land.ids), n)]
        best = max(land.reward(c) for c in combos)
        assert exhaustive_best(land) == (next(c for c in combos if land.reward(c) == best), best)


def test_pool_of_one():
    land = make_landscape(LandscapeParams(pool_size=1), 3)
    best, r = exhaustive_best(land)
    assert best in {(), ("Reasoning",)}
    assert r == max(land.reward(()), land.reward(("Reasoning",)))


def test_cold_rows_and_oracle_dominance():
    methods = [MethodSpec("cold_exhaustive"), MethodSpec("warm_eps_greedy", perturbation=1.0)]
    report = run_comparison(LandscapeParams(), methods, trials=10, seed=4)
    for r in report.method_rows("cold_exhaustive"):
        assert r.evaluations_used == 65 and r.regret == 0
    for r in report.rows:
        assert r.best_reward <= r.oracle_best and r.regret >= 0
    for r in report.method_rows("warm_eps_greedy"):
        assert r.evaluations_used <= 15 and r.rho == pytest.approx(0.5)


def test_identical_reference_greedy_finds_optimum_within_k():
    m = MethodSpec("warm_eps_greedy", SearchConfig(epsilon=0, k=3), perturbation=0.0)
    report = run_comparison(LandscapeParams(), [m], trials=20, seed=1)
    for r in report.rows:
        assert r.regret == 0 and r.curve[min(2, len(r.curve) - 1)] == 0


def test_report_outputs_are_deterministic(tmp_path):
    cfg = BenchConfig(trials=3, seed=7)
    a, b = cfg.run(), cfg.run()
    assert a.to_csv() == b.to_csv()
    assert a.to_csv().splitlines()[0].startswith("trial,method,seed")
    assert json.loads(json.dumps(a.to_dict()))["trials"] == 3
    assert "cold_exhaustive" in a.table() and "warm_eps_greedy" in a.table()
    path = a.plot_svg(tmp_path / "b.svg")
    assert path.read_text().lstrip().startswith("<?xml")


def test_parallel_trials_match_serial():
    serial = run_comparison(LandscapeParams(), trials=4, seed=2)
    parallel = run_comparison(LandscapeParams(), trials=4, seed=2, workers=2)
    assert serial.to_csv() == parallel.to_csv()


def test_bench_config_parsing():
    cfg = BenchConfig.from_dict({"trials": 2, "landscape": {"pool_size": 3},
                                 "methods": [{"kind": "warm_eps_greedy", "budget": 5, "perturbation": 0.5}]})
    assert cfg.methods[0].search.budget == 5 and cfg.methods[0].rho == rho_for(0.5)
    assert cfg.landscape.ids == ("Reasoning", "Reinterpretation", "Simplification")


def test_world_realizes_reward_as_accuracy():
    w = make_world(LandscapeParams(pool_size=4), 3, n_samples=30)
    inf, opt = w.models()
    base = PromptCandidate.initial(w.task.initial_prompt)
    for combo in enumerate_combos(w.pool, 2):
        cand = compose_combo(base, combo, w.pool, opt)
        assert w.decode(cand.text) == (combo, 0)
        r = evaluate_prompt(cand, w.dataset, inf, w.task.label_set)
        assert r.accuracy == math.floor(w.landscape.reward(combo) * 30 + 0.5) / 30
        if r.errors:
            assert any(e.predicted_label == UNPARSED for e in r.errors) or len(r.errors) < 5


def test_refine_marker_adds_bonus():
    w = make_world(LandscapeParams(), 3, n_samples=50, refine_bonus=0.1)
    text = w.task.initial_prompt + "\n<<refine>>"
    assert w.expected_accuracy(text) == Fraction(realized_correct(w.landscape.reward(()) + 0.1, 50), 50)


def test_ablation_trial_ordering():
    row = ablation_trial(LandscapeParams(), 0, 0)
    assert row.full > row.rws_only > row.baseline
