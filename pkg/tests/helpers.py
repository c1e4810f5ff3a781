"""Small builders shared by the test modules."""

from __future__ import annotations

from typing import Callable, Sequence

from promptsmith.backends import CompletionRequest, Model, ModelRef, SimulatedBackend, TraceLog
from promptsmith.data import Dataset, Sample, Task

WHITE = Task(
    task_id="bg-color",
    name="background colour",
    category="image classification",
    initial_prompt="Is the background of this product image white? Answer white or other.",
    label_set=("white", "other"),
)

THREE = Task(
    task_id="three-way",
    name="three way",
    category="classification",
    initial_prompt="Pick A, B or C.",
    label_set=("A", "B", "C"),
)


def dataset(task: Task, golds: Sequence[str], tag="validation") -> Dataset:
    return Dataset(task.task_id, tuple(Sample(f"s{i:03d}", g) for i, g in enumerate(golds)), tag)


def sim_model(responder: Callable[[CompletionRequest], str], role="inference", model_id=None,
              trace: TraceLog | None = None, limit: int = 1, seed: int | None = None) -> Model:
    ref = ModelRef(model_id or f"sim-{role}", role, parallelism_limit=limit)
    return Model(ref, SimulatedBackend(responder, trace), seed)


def by_sample(answers: dict[str, str]) -> Callable[[CompletionRequest], str]:
    return lambda req: answers[req.context["sample_id"]]


class Recorder:
    """Responder that records every request and answers from a list (last answer repeats)."""

    def __init__(self, answers: Sequence[str] | Callable[[CompletionRequest], str]):
        self.answers = answers
        self.requests: list[CompletionRequest] = []

    def __call__(self, req: CompletionRequest) -> str:
        self.requests.append(req)
        if callable(self.answers):
            return self.answers(req)
        i = min(len(self.requests) - 1, len(self.answers) - 1)
        return self.answers[i]


ANALYSIS_JSON = '{"Error Causes": "options overlap", "Improvement Methods": "define each option"}'


class RegressionFixture:
    """Scripted world where refinement goes v1 -> v2 -> v3 with accuracy 0.5 -> 0.8 -> 0.6 on 10 samples."""

    CORRECT = {"PROMPT v1": 5, "PROMPT v2": 8, "PROMPT v3": 6, "PROMPT v4": 7}

    def __init__(self, trace: TraceLog | None = None):
        self.task = WHITE
        self.val = dataset(WHITE, ["white", "other"] * 5)
        self.rewrite_requests: list[CompletionRequest] = []
        self.analysis_requests: list[CompletionRequest] = []
        self.inference = sim_model(self._infer, trace=trace)
        self.optimizer = sim_model(self._optimize, role="optimizer", trace=trace)

    def _infer(self, req: CompletionRequest) -> str:
        i = int(req.context["sample_id"][1:])
        gold = self.val.samples[i].gold_label
        wrong = "other" if gold == "white" else "white"
        return gold if i < self.CORRECT[req.user_text] else wrong

    def _optimize(self, req: CompletionRequest) -> str:
        if req.context["purpose"] == "error_analysis":
            self.analysis_requests.append(req)
            return ANALYSIS_JSON
        self.rewrite_requests.append(req)
        n = int(req.context["prompt"].rsplit("v", 1)[1])
        return f"PROMPT v{n + 1}"
