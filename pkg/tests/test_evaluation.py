from collections import Counter

import pytest

from promptsmith.errors import EmptyDataset, GoldNotInLabelSet
from promptsmith.evaluation import (
    UNPARSED,
    SampleRecord,
    compute_error_distribution,
    evaluate_prompt,
    score_sample,
)
from promptsmith.strategies import PromptCandidate

from helpers import THREE, WHITE, by_sample, dataset, sim_model

P = PromptCandidate.initial("p")


def test_score_sample():
    assert score_sample("white", "white", WHITE.label_set).score == 1
    assert score_sample("other", "white", WHITE.label_set).score == 0
    r = score_sample("hmm, white or other", "white", WHITE.label_set)
    assert r.predicted_label == UNPARSED and r.score == 0
    with pytest.raises(GoldNotInLabelSet):
        score_sample("white", "purple", WHITE.label_set)


def test_accuracy_three_of_four():
    d = dataset(WHITE, ["white", "other", "white", "other"])
    answers = {"s000": "white", "s001": "other", "s002": "White.", "s003": "white"}
    r = evaluate_prompt(P, d, sim_model(by_sample(answers)), WHITE.label_set)
    assert r.accuracy == 0.75 and r.correct == 3
    assert r.error_distribution.buckets == {("other", "white"): 1}
    assert r.dataset_tag == "bg-color:validation"


def test_perfect_backend():
    d = dataset(WHITE, ["white", "other"] * 3)
    gold = {s.sample_id: s.gold_label for s in d}
    r = evaluate_prompt(P, d, sim_model(by_sample(gold)), WHITE.label_set)
    assert r.accuracy == 1.0 and r.error_distribution.buckets == {}


def test_ten_sample_confusions():
    golds = ["A", "A", "A", "B", "B", "C", "C", "C", "A", "B"]
    answers = ["B", "B", "A", "B", "B", "C", "unsure", "C", "A", "B"]
    d = dataset(THREE, golds)
    r = evaluate_prompt(P, d, sim_model(by_sample(dict(zip([s.sample_id for s in d], answers)))), THREE.label_set)
    assert r.error_distribution.buckets == {("A", "B"): 2, ("C", UNPARSED): 1}
    assert r.accuracy == 0.7


def test_error_distribution_counting():
    ok = [SampleRecord("1", "a", "A", "A", 1)]
    assert compute_error_distribution(ok).buckets == {}
    two = [SampleRecord("1", "", "B", "A", 0), SampleRecord("2", "", "C", "A", 0)]
    dist = compute_error_distribution(two)
    assert dist.buckets == {("A", "B"): 1, ("A", "C"): 1}
    assert dist.total == 2 and dist.ranked()[0] == (("A", "B"), 1)


def test_history_and_empty_dataset():
    d = dataset(WHITE, ["white"])
    hist = []
    evaluate_prompt(P, d, sim_model(lambda r: "white"), WHITE.label_set, hist)
    assert len(hist) == 1
    with pytest.raises(EmptyDataset):
        evaluate_prompt(P, dataset(WHITE, []), sim_model(lambda r: "white"), WHITE.label_set)


def test_records_serialize():
    d = dataset(WHITE, ["white", "other"])
    r = evaluate_prompt(P, d, sim_model(lambda r: "white"), WHITE.label_set)
    out = r.to_dict()
    assert out["correct"] == 1 and len(out["records"]) == 2
    assert out["error_distribution"] == [{"gold": "other", "predicted": "white", "count": 1}]
    assert Counter(x["score"] for x in out["records"]) == {1: 1, 0: 1}
