import base64
import json
import threading
import time

import httpx
import pytest

from promptsmith.backends import (
    CompletionRequest,
    HttpBackend,
    Message,
    Model,
    ModelRef,
    RuleScript,
    TraceLog,
    batch_infer,
    extract_structured,
    scripted,
)
from promptsmith.data import MediaRef, Sample
from promptsmith.errors import (
    AllSamplesFailed,
    AuthMissing,
    MissingKeys,
    NoJsonFound,
    RetriesExhausted,
    Transport,
)
from promptsmith.evaluation import evaluate_prompt
from promptsmith.strategies import PromptCandidate

from helpers import WHITE, by_sample, dataset, sim_model

OK_BODY = {"choices": [{"message": {"content": "white"}}], "usage": {"prompt_tokens": 7, "completion_tokens": 1}}


def http_model(handler, trace=None, sleeps=None, **kw):
    client = httpx.Client(transport=httpx.MockTransport(handler))
    backend = HttpBackend(trace or TraceLog(), client=client, sleep=(sleeps.append if sleeps is not None else lambda s: None), **kw)
    return Model(ModelRef("vlm", "inference", "https://api.example/v1"), backend)


def test_model_ref_defaults():
    assert ModelRef("a").temperature == 0
    assert ModelRef("b", "optimizer").temperature == 1
    assert ModelRef("c", "optimizer", temperature=0.2).temperature == 0.2


def test_echo_label_script():
    m = sim_model(scripted("echo-label:white"))
    assert m.ask("anything at all") == "white"
    assert m.ask("something else") == "white"


def test_rule_script_first_match_wins():
    rules = RuleScript([
        {"sample_id": "s001", "fail": True},
        {"match": "background", "response": "white-{sample_id}"},
    ], default="other")
    m = sim_model(rules)
    assert m.ask("the background?", context={"sample_id": "s000"}) == "white-s000"
    assert m.ask("nothing", context={"sample_id": "s000"}) == "other"
    with pytest.raises(Transport):
        m.ask("the background?", context={"sample_id": "s001"})


def test_request_needs_user_message():
    with pytest.raises(ValueError):
        CompletionRequest(ModelRef("m"), (Message("system", "x"),))


def test_two_429s_then_success(monkeypatch):
    monkeypatch.setenv("PROMPTSMITH_API_KEY", "k")
    calls = []

    def handler(request):
        calls.append(request)
        if len(calls) <= 2:
            return httpx.Response(429, headers={"Retry-After": "3"})
        return httpx.Response(200, json=OK_BODY)

    trace, sleeps = TraceLog(), []
    m = http_model(handler, trace, sleeps)
    result = m.complete("hello")
    assert result.text == "white" and result.retry_count == 2
    assert sleeps == [3.0, 3.0]
    completion = [r for r in trace.records if r["event"] == "completion"]
    assert completion[-1]["retry_count"] == 2
    assert len([r for r in trace.records if r["event"] == "retry"]) == 2
    sent = json.loads(calls[0].content)
    assert calls[0].url.path == "/v1/chat/completions"
    assert calls[0].headers["authorization"] == "Bearer k"
    assert sent["temperature"] == 0 and sent["messages"][0] == {"role": "user", "content": "hello"}


def test_missing_key_fails_before_network(monkeypatch):
    monkeypatch.delenv("PROMPTSMITH_API_KEY", raising=False)
    calls = []
    m = http_model(lambda r: calls.append(r) or httpx.Response(200, json=OK_BODY))
    with pytest.raises(AuthMissing):
        m.complete("hello")
    assert calls == []


def test_server_errors_exhaust_with_backoff(monkeypatch):
    monkeypatch.setenv("PROMPTSMITH_API_KEY", "k")
    sleeps = []
    m = http_model(lambda r: httpx.Response(503, text="busy"), sleeps=sleeps, max_retries=3, backoff_s=0.5)
    with pytest.raises(RetriesExhausted) as exc:
        m.complete("x")
    assert exc.value.attempts == 4
    assert sleeps == [0.5, 1.0, 2.0]


def test_client_error_is_not_retried(monkeypatch):
    monkeypatch.setenv("PROMPTSMITH_API_KEY", "k")
    calls = []
    m = http_model(lambda r: calls.append(r) or httpx.Response(400, text="bad"))
    with pytest.raises(Transport) as exc:
        m.complete("x")
    assert exc.value.code == 400 and len(calls) == 1


def test_connection_errors_are_retried(monkeypatch):
    monkeypatch.setenv("PROMPTSMITH_API_KEY", "k")
    calls = []

    def handler(request):
        calls.append(request)
        if len(calls) == 1:
            raise httpx.ConnectError("refused")
        return httpx.Response(200, json=OK_BODY)

    assert http_model(handler).complete("x").retry_count == 1


def test_images_are_sent_as_data_urls(monkeypatch, tmp_path):
    monkeypatch.setenv("PROMPTSMITH_API_KEY", "k")
    img = tmp_path / "a.png"
    img.write_bytes(b"\x89PNG fake")
    sent = []

    def handler(request):
        if request.method == "GET":
            return httpx.Response(200, content=b"jpegbytes", headers={"content-type": "image/jpeg"})
        sent.append(json.loads(request.content))
        return httpx.Response(200, json=OK_BODY)

    m = http_model(handler)
    media = (MediaRef("image_path", str(img)), MediaRef("image_url", "https://img/x.jpg"),
             MediaRef("image_base64", "iVBORw0KGgo="))
    m.complete("describe", media)
    parts = sent[0]["messages"][0]["content"]
    assert parts[0] == {"type": "text", "text": "describe"}
    urls = [p["image_url"]["url"] for p in parts[1:]]
    assert urls[0] == "data:image/png;base64," + base64.b64encode(b"\x89PNG fake").decode()
    assert urls[1] == "data:image/jpeg;base64," + base64.b64encode(b"jpegbytes").decode()
    assert urls[2] == "data:image/png;base64,iVBORw0KGgo="


def test_batch_infer_alignment():
    samples = [Sample(f"s{i}", "white") for i in range(4)]
    answers = {"s0": "white", "s1": "other", "s2": "white", "s3": "other"}
    for limit in (1, 4):
        out = batch_infer(PromptCandidate.initial("p"), samples, sim_model(by_sample(answers), limit=limit))
        assert out == ["white", "other", "white", "other"]


def test_sequential_when_limit_is_one():
    order = []

    def responder(req):
        order.append(req.context["sample_id"])
        return "white"

    samples = [Sample(f"s{i}", "white") for i in range(8)]
    batch_infer(PromptCandidate.initial("p"), samples, sim_model(responder, limit=1))
    assert order == [s.sample_id for s in samples]


def test_parallelism_limit_is_enforced():
    active, peak, lock = [0], [0], threading.Lock()

    def responder(req):
        with lock:
            active[0] += 1
            peak[0] = max(peak[0], active[0])
        time.sleep(0.01)
        with lock:
            active[0] -= 1
        return "white"

    samples = [Sample(f"s{i}", "white") for i in range(12)]
    model = sim_model(responder, limit=3)
    # a second caller on the same backend cannot push past the limit either
    threads = [threading.Thread(target=batch_infer, args=("p", samples, model)) for _ in range(2)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert 1 < peak[0] <= 3


def test_one_permanent_failure_scores_as_wrong():
    d = dataset(WHITE, ["white", "white", "other", "other"])

    def responder(req):
        if req.context["sample_id"] == "s001":
            raise Transport(None, "gone")
        return {"s000": "white", "s002": "white", "s003": "other"}[req.context["sample_id"]]

    outputs = batch_infer("p", d.samples, sim_model(responder))
    assert sum(isinstance(o, str) for o in outputs) == 3
    result = evaluate_prompt(PromptCandidate.initial("p"), d, sim_model(responder), WHITE.label_set)
    assert result.correct == 2  # s000 and s003 among the three answers
    assert result.records[1].error and result.records[1].score == 0


def test_all_failures_raise():
    def responder(req):
        raise Transport(None, "down")

    with pytest.raises(AllSamplesFailed):
        batch_infer("p", [Sample("a", "white")], sim_model(responder))


def test_extract_structured():
    text = 'Sure! {"Error Causes": "a", "Improvement Methods": "b"}'
    assert extract_structured(text, ["Error Causes", "Improvement Methods"]) == {
        "Error Causes": "a", "Improvement Methods": "b"}
    with pytest.raises(NoJsonFound):
        extract_structured("plain prose only", ["x"])
    with pytest.raises(MissingKeys) as exc:
        extract_structured('{"Error Causes": "a"}', ["Error Causes", "Improvement Methods"])
    assert exc.value.keys == ["Improvement Methods"]


def test_extract_skips_bad_braces_and_fences():
    text = 'notes {not json} then\n```json\n{"a": "x", "b": ["y"]}\n```'
    assert extract_structured(text, ["a", "b"]) == {"a": "x", "b": '["y"]'}


def test_trace_file(tmp_path):
    trace = TraceLog(tmp_path / "t.jsonl")
    sim_model(scripted("constant:hi"), trace=trace).ask("q", context={"purpose": "x"})
    trace.close()
    rec = json.loads((tmp_path / "t.jsonl").read_text().splitlines()[0])
    assert rec["event"] == "completion" and rec["text"] == "hi" and rec["context"] == {"purpose": "x"}
