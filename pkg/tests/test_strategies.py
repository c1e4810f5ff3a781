import hashlib
import json

import pytest

from promptsmith.errors import ComboRepeat, MissingOptimizer, OptimizerEmptyResponse, UnknownStrategy
from promptsmith.strategies import (
    BUILTIN_IDS,
    PromptCandidate,
    Strategy,
    StrategyPool,
    apply_strategy,
    builtin_pool,
    combo_label,
    compose_combo,
    replay_lineage,
)

from helpers import Recorder, sim_model

REASONING = "Please carefully understand the question before answering and provide your thought and analysis process."


def hashing_optimizer():
    rec = Recorder(lambda req: "REWRITTEN:" + hashlib.sha256(req.user_text.encode()).hexdigest()[:16])
    return rec, sim_model(rec, role="optimizer")


def test_builtin_pool():
    pool = builtin_pool()
    assert len(pool) == 8 and pool.ids == list(BUILTIN_IDS)
    assert pool["Reasoning"].mode == "suffix"
    assert pool["Reasoning"].template.startswith("Please carefully understand the question")
    assert pool["Simplification"].mode == "rewrite"
    assert "optimizing prompts to help smaller models" in pool["Simplification"].template
    for s in pool:
        if s.mode == "rewrite":
            assert s.template.count("{prompt}") == 1


def test_rewrite_template_needs_one_placeholder():
    with pytest.raises(ValueError):
        Strategy("x", "rewrite", "no placeholder")
    with pytest.raises(ValueError):
        StrategyPool([Strategy("a", "suffix", "x"), Strategy("a", "suffix", "y")])
    with pytest.raises(UnknownStrategy):
        builtin_pool()["Nope"]


def test_suffix_strategy_appends():
    c = apply_strategy(PromptCandidate.initial("Classify X."), builtin_pool()["Reasoning"])
    assert c.text == "Classify X.\n" + REASONING
    assert c.combo == ("Reasoning",) and c.eso_iteration == 0


def test_rewrite_needs_optimizer():
    with pytest.raises(MissingOptimizer):
        apply_strategy(PromptCandidate.initial("p"), builtin_pool()["Simplification"])


def test_rewrite_output_is_scripted_function_of_request():
    pool = builtin_pool()
    rec, opt = hashing_optimizer()
    c = apply_strategy(PromptCandidate.initial("Classify X."), pool["RolePrompting"], opt)
    request = pool["RolePrompting"].template.replace("{prompt}", "Classify X.")
    assert rec.requests[0].user_text == request
    assert c.text == "REWRITTEN:" + hashlib.sha256(request.encode()).hexdigest()[:16]
    assert c.combo == ("RolePrompting",)


def test_empty_rewrite_is_an_error():
    opt = sim_model(lambda req: "   ", role="optimizer")
    with pytest.raises(OptimizerEmptyResponse):
        apply_strategy(PromptCandidate.initial("p"), builtin_pool()["Caption"], opt)


def test_compose_combo():
    pool = builtin_pool()
    base = PromptCandidate.initial("Classify X.")
    assert compose_combo(base, (), pool) == base
    crit = pool["SelfCriticism"].template
    ab = compose_combo(base, ("Reasoning", "SelfCriticism"), pool)
    ba = compose_combo(base, ("SelfCriticism", "Reasoning"), pool)
    assert ab.text == f"Classify X.\n{REASONING}\n{crit}"
    assert ab.text != ba.text
    with pytest.raises(ComboRepeat):
        compose_combo(base, ("Reasoning", "Reasoning"), pool)


def test_chained_rewrites_match_manual_chain():
    pool = builtin_pool()
    base = PromptCandidate.initial("Classify X.")
    rec, opt = hashing_optimizer()
    composed = compose_combo(base, ("RolePrompting", "Decomposition"), pool, opt)
    assert len(rec.requests) == 2
    _, opt2 = hashing_optimizer()
    manual = apply_strategy(apply_strategy(base, pool["RolePrompting"], opt2), pool["Decomposition"], opt2)
    assert composed == manual
    assert "RolePrompting" in composed.lineage_note and "Decomposition" in composed.lineage_note
    assert replay_lineage(composed, pool, opt2) == composed


def test_prefix_cache_saves_rewrites():
    pool = builtin_pool()
    rec, opt = hashing_optimizer()
    cache = {}
    base = PromptCandidate.initial("p")
    compose_combo(base, ("RolePrompting",), pool, opt, cache)
    compose_combo(base, ("RolePrompting", "Decomposition"), pool, opt, cache)
    compose_combo(base, ("RolePrompting", "Reasoning"), pool, opt, cache)
    assert len(rec.requests) == 2


def test_mode_override_and_custom_pool(tmp_path):
    pool = builtin_pool().with_modes({"Caption": "suffix"})
    assert pool["Caption"].mode == "suffix"
    (tmp_path / "0.json").write_text(json.dumps({"strategy_id": "Shout", "mode": "suffix", "template": "LOUDLY."}))
    custom = StrategyPool.from_dir(tmp_path)
    assert apply_strategy(PromptCandidate.initial("p"), custom["Shout"]).text == "p\nLOUDLY."
    assert len(builtin_pool().extended(custom)) == 9


def test_candidate_round_trip():
    c = PromptCandidate("t", "b", ("Reasoning",), 2, "note")
    assert PromptCandidate.from_dict(json.loads(json.dumps(c.to_dict()))) == c
    assert combo_label(()) == "(none)" and combo_label(("A", "B")) == "A + B"
