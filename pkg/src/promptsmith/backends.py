"""Model access: an OpenAI-compatible HTTP client and a scripted simulator.

Every model call in the package goes through :meth:`Backend.complete`, which
enforces the per-model parallelism limit and appends to the run's trace log.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import mimetypes
import os
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Literal, Mapping, Sequence

import httpx

from .data import MediaRef, Sample
from .errors import (
    AllSamplesFailed,
    AuthMissing,
    BackendError,
    MissingKeys,
    NoJsonFound,
    RateLimited,
    RetriesExhausted,
    Transport,
)

log = logging.getLogger(__name__)

API_KEY_ENV = "PROMPTSMITH_API_KEY"
SIMULATED = "simulated"

Role = Literal["inference", "optimizer"]
_DEFAULT_TEMPERATURE = {"inference": 0.0, "optimizer": 1.0}


@dataclass(frozen=True)
class ModelRef:
    model_id: str
    role: Role = "inference"
    endpoint: str = SIMULATED
    temperature: float | None = None  # None -> 0 for inference, 1 for optimizer
    max_output_tokens: int = 1024
    parallelism_limit: int = 4

    def __post_init__(self):
        if self.role not in _DEFAULT_TEMPERATURE:
            raise ValueError(f"unknown model role {self.role!r}")
        if self.temperature is None:
            object.__setattr__(self, "temperature", _DEFAULT_TEMPERATURE[self.role])
        if self.parallelism_limit < 1:
            raise ValueError("parallelism_limit must be >= 1")

    @property
    def simulated(self) -> bool:
        return self.endpoint == SIMULATED

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], role: Role) -> ModelRef:
        return cls(
            model_id=str(d["model_id"]),
            role=role,
            endpoint=str(d.get("endpoint", SIMULATED)),
            temperature=d.get("temperature"),
            max_output_tokens=int(d.get("max_output_tokens", 1024)),
            parallelism_limit=int(d.get("parallelism_limit", 4)),
        )


@dataclass(frozen=True)
class Message:
    role: Literal["system", "user"]
    text: str
    media: tuple[MediaRef, ...] = ()


@dataclass(frozen=True)
class CompletionRequest:
    model: ModelRef
    messages: tuple[Message, ...]
    seed: int | None = None
    # annotations for trace logs and simulators; never sent over the wire
    context: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not any(m.role == "user" for m in self.messages):
            raise ValueError("a completion request needs at least one user message")

    @property
    def user_text(self) -> str:
        return "\n".join(m.text for m in self.messages if m.role == "user")

    @property
    def text(self) -> str:
        return "\n".join(m.text for m in self.messages)


@dataclass(frozen=True)
class CompletionResult:
    text: str
    input_tokens: int
    output_tokens: int
    latency_ms: int
    backend_kind: Literal["http", "simulated"]
    retry_count: int = 0


def request_digest(req: CompletionRequest) -> str:
    payload = {
        "model": req.model.model_id,
        "messages": [[m.role, m.text, [[r.kind, r.payload] for r in m.media]] for m in req.messages],
        "seed": req.seed,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


class TraceLog:
    """Append-only JSONL record of model traffic. Thread-safe, single file handle."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self.records: list[dict[str, Any]] = []
        self._lock = threading.Lock()
        self._fh = open(self.path, "a", encoding="utf-8") if self.path else None

    def write(self, record: dict[str, Any]) -> None:
        record = {"ts": round(time.time(), 3), **record}
        with self._lock:
            self.records.append(record)
            if self._fh:
                self._fh.write(json.dumps(record, ensure_ascii=False) + "\n")
                self._fh.flush()

    def close(self) -> None:
        if self._fh:
            self._fh.close()
            self._fh = None


def _media_summary(media: Sequence[MediaRef]) -> list[dict[str, str]]:
    return [{"kind": m.kind, "payload": m.payload[:80]} for m in media]


class Backend:
    kind: Literal["http", "simulated"]

    def __init__(self, trace: TraceLog | None = None):
        self.trace = trace or TraceLog()
        self.calls: Counter[str] = Counter()
        self._sems: dict[tuple[str, str], threading.BoundedSemaphore] = {}
        self._sem_lock = threading.Lock()
        self._count_lock = threading.Lock()

    def _semaphore(self, ref: ModelRef) -> threading.BoundedSemaphore:
        key = (ref.model_id, ref.role)
        with self._sem_lock:
            if key not in self._sems:
                self._sems[key] = threading.BoundedSemaphore(ref.parallelism_limit)
            return self._sems[key]

    def complete(self, req: CompletionRequest) -> CompletionResult:
        with self._count_lock:
            self.calls[req.model.role] += 1
        base = {
            "backend": self.kind,
            "model_id": req.model.model_id,
            "role": req.model.role,
            "context": dict(req.context),
        }
        with self._semaphore(req.model):
            try:
                result = self._complete(req)
            except BackendError as exc:
                self.trace.write({**base, "event": "error", "error": f"{type(exc).__name__}: {exc}",
                                  "messages": self._log_messages(req)})
                raise
        self.trace.write({
            **base,
            "event": "completion",
            "messages": self._log_messages(req),
            "text": result.text,
            "usage": {"input_tokens": result.input_tokens, "output_tokens": result.output_tokens},
            "latency_ms": result.latency_ms,
            "retry_count": result.retry_count,
        })
        return result

    @staticmethod
    def _log_messages(req: CompletionRequest) -> list[dict[str, Any]]:
        return [{"role": m.role, "text": m.text, "media": _media_summary(m.media)} for m in req.messages]

    def _complete(self, req: CompletionRequest) -> CompletionResult:
        raise NotImplementedError


# -- simulated -------------------------------------------------------------

Responder = Callable[[CompletionRequest], str]


class SimulatedBackend(Backend):
    """Deterministic backend driven by a responder function.

    The responder sees the whole request (including ``context`` and ``seed``)
    and must be a pure function of it. Raising a :class:`BackendError` from
    the responder simulates a failed call.
    """

    kind = "simulated"

    def __init__(self, responder: Responder, trace: TraceLog | None = None):
        super().__init__(trace)
        self.responder = responder

    def _complete(self, req: CompletionRequest) -> CompletionResult:
        text = self.responder(req)
        return CompletionResult(
            text=text,
            input_tokens=len(req.text.split()),
            output_tokens=len(text.split()),
            latency_ms=0,
            backend_kind="simulated",
        )


class RuleScript:
    """Declarative responder: first matching rule wins.

    Rules are dicts with optional ``match`` (substring of the user text) and
    ``sample_id`` conditions, and either ``response`` (a template that may use
    ``{sample_id}`` and ``{digest}``) or ``"fail": true``.
    """

    def __init__(self, rules: Sequence[Mapping[str, Any]], default: str | None = None):
        self.rules = [dict(r) for r in rules]
        self.default = default

    @classmethod
    def from_file(cls, path: str | Path) -> RuleScript:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(raw.get("rules", []), raw.get("default"))

    def __call__(self, req: CompletionRequest) -> str:
        text = req.user_text
        sid = req.context.get("sample_id", "")
        for rule in self.rules:
            if "match" in rule and rule["match"] not in text:
                continue
            if "sample_id" in rule and rule["sample_id"] != sid:
                continue
            if rule.get("fail"):
                raise Transport(None, f"scripted failure for sample {sid!r}")
            return str(rule.get("response", "")).replace("{sample_id}", sid).replace(
                "{digest}", request_digest(req)[:12])
        if self.default is None:
            raise Transport(None, "no scripted rule matched")
        return self.default


def scripted(spec: str) -> Responder:
    """Build a responder from a short script string or a rule-file path.

    ``echo-label:LABEL`` always answers LABEL; ``constant:TEXT`` likewise;
    anything else is read as a JSON rule file (see :class:`RuleScript`).
    """
    if spec.startswith("echo-label:"):
        label = spec.split(":", 1)[1]
        return lambda req: label
    if spec.startswith("constant:"):
        text = spec.split(":", 1)[1]
        return lambda req: text
    return RuleScript.from_file(spec)


# -- http ------------------------------------------------------------------

def _sniff_mime(b64: str) -> str:
    if b64.startswith("iVBOR"):
        return "image/png"
    if b64.startswith("R0lGOD"):
        return "image/gif"
    if b64.startswith("UklGR"):
        return "image/webp"
    return "image/jpeg"


class HttpBackend(Backend):
    """OpenAI-compatible ``/chat/completions`` client with retry and backoff."""

    kind = "http"

    def __init__(
        self,
        trace: TraceLog | None = None,
        *,
        client: httpx.Client | None = None,
        api_key_env: str = API_KEY_ENV,
        max_retries: int = 3,
        backoff_s: float = 1.0,
        timeout_s: float = 120.0,
        sleep: Callable[[float], None] = time.sleep,
    ):
        super().__init__(trace)
        self.client = client or httpx.Client(timeout=timeout_s)
        self.api_key_env = api_key_env
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self.sleep = sleep

    @staticmethod
    def url(endpoint: str) -> str:
        endpoint = endpoint.rstrip("/")
        return endpoint if endpoint.endswith("/chat/completions") else endpoint + "/chat/completions"

    def _image_url(self, ref: MediaRef) -> str | None:
        if ref.kind == "image_base64":
            return ref.payload if ref.payload.startswith("data:") else f"data:{_sniff_mime(ref.payload)};base64,{ref.payload}"
        if ref.kind == "image_path":
            data = Path(ref.payload).read_bytes()
            mime = mimetypes.guess_type(ref.payload)[0] or "image/jpeg"
        elif ref.kind == "image_url":
            resp = self.client.get(ref.payload)
            resp.raise_for_status()
            data = resp.content
            mime = resp.headers.get("content-type", "").split(";")[0] or "image/jpeg"
        else:
            return None
        return f"data:{mime};base64,{base64.b64encode(data).decode()}"

    def body(self, req: CompletionRequest) -> dict[str, Any]:
        messages = []
        for m in req.messages:
            images = [u for u in (self._image_url(r) for r in m.media) if u]
            if images:
                content: Any = [{"type": "text", "text": m.text}]
                content += [{"type": "image_url", "image_url": {"url": u}} for u in images]
            else:
                content = m.text
            messages.append({"role": m.role, "content": content})
        body = {
            "model": req.model.model_id,
            "messages": messages,
            "temperature": req.model.temperature,
            "max_tokens": req.model.max_output_tokens,
        }
        if req.seed is not None:
            body["seed"] = req.seed
        return body

    def _complete(self, req: CompletionRequest) -> CompletionResult:
        key = os.environ.get(self.api_key_env, "").strip()
        if not key:
            raise AuthMissing(f"set {self.api_key_env} to call {req.model.endpoint}")
        url = self.url(req.model.endpoint)
        body = self.body(req)
        headers = {"Authorization": f"Bearer {key}"}
        start = time.perf_counter()
        attempt = 0
        while True:
            err: BackendError
            try:
                resp = self.client.post(url, json=body, headers=headers)
            except httpx.TransportError as exc:
                err = Transport(None, str(exc))
            else:
                if resp.status_code == 429:
                    err = RateLimited(_retry_after(resp))
                elif resp.status_code >= 400:
                    err = Transport(resp.status_code, resp.text[:200])
                    if not err.transient:
                        raise err
                else:
                    return self._parse(resp, attempt, start)
            if attempt >= self.max_retries:
                raise RetriesExhausted(attempt + 1, err)
            delay = self.backoff_s * 2**attempt
            if isinstance(err, RateLimited) and err.retry_after is not None:
                delay = err.retry_after
            self.trace.write({"event": "retry", "model_id": req.model.model_id, "attempt": attempt + 1,
                              "error": str(err), "delay_s": delay, "context": dict(req.context)})
            self.sleep(delay)
            attempt += 1

    @staticmethod
    def _parse(resp: httpx.Response, retries: int, start: float) -> CompletionResult:
        try:
            data = resp.json()
            content = data["choices"][0]["message"].get("content") or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise Transport(resp.status_code, f"unexpected response body: {exc}") from exc
        if isinstance(content, list):
            content = "".join(p.get("text", "") for p in content if isinstance(p, dict))
        usage = data.get("usage") or {}
        return CompletionResult(
            text=content,
            input_tokens=int(usage.get("prompt_tokens", 0)),
            output_tokens=int(usage.get("completion_tokens", 0)),
            latency_ms=int((time.perf_counter() - start) * 1000),
            backend_kind="http",
            retry_count=retries,
        )


def _retry_after(resp: httpx.Response) -> float | None:
    value = resp.headers.get("retry-after")
    try:
        return float(value) if value is not None else None
    except ValueError:
        return None


# -- bound model -----------------------------------------------------------


@dataclass
class Model:
    """A :class:`ModelRef` bound to the backend that serves it."""

    ref: ModelRef
    backend: Backend
    seed: int | None = None
    # where optimizer templates go; "system" adds a short user turn after them
    template_role: Literal["user", "system"] = "user"

    def complete(self, text: str, media: Sequence[MediaRef] = (), context: Mapping[str, str] | None = None) -> CompletionResult:
        if self.template_role == "system":
            msgs = (Message("system", text), Message("user", "Follow the instructions above.", tuple(media)))
        else:
            msgs = (Message("user", text, tuple(media)),)
        req = CompletionRequest(self.ref, msgs, seed=self.seed, context=dict(context or {}))
        return self.backend.complete(req)

    def ask(self, text: str, media: Sequence[MediaRef] = (), context: Mapping[str, str] | None = None) -> str:
        return self.complete(text, media, context).text


def make_backend(ref: ModelRef, trace: TraceLog, responder: Responder | None = None) -> Backend:
    if ref.simulated:
        if responder is None:
            raise ValueError(f"simulated model {ref.model_id!r} needs a responder")
        return SimulatedBackend(responder, trace)
    return HttpBackend(trace)


# -- batch inference -------------------------------------------------------


@dataclass(frozen=True)
class FailedOutput:
    """Marker for a sample whose model call failed; scored as incorrect."""

    error: str


def batch_infer(prompt, samples: Sequence[Sample], model: Model) -> list[str | FailedOutput]:
    """Run ``prompt`` on every sample; ``out[i]`` always belongs to ``samples[i]``."""
    if not samples:
        raise ValueError("batch_infer needs at least one sample")
    text = prompt.text if hasattr(prompt, "text") else str(prompt)

    def one(sample: Sample) -> str | FailedOutput:
        try:
            return model.ask(text, sample.media, {"sample_id": sample.sample_id})
        except BackendError as exc:
            log.warning("sample %s failed: %s", sample.sample_id, exc)
            return FailedOutput(f"{type(exc).__name__}: {exc}")

    limit = model.ref.parallelism_limit
    if limit == 1:
        outputs = [one(s) for s in samples]
    else:
        with ThreadPoolExecutor(max_workers=min(limit, len(samples))) as pool:
            outputs = list(pool.map(one, samples))
    if all(isinstance(o, FailedOutput) for o in outputs):
        raise AllSamplesFailed(f"all {len(samples)} samples failed; first error: {outputs[0].error}")
    return outputs


# -- structured output -----------------------------------------------------


def _first_json_object(text: str) -> dict[str, Any]:
    decoder = json.JSONDecoder()
    pos = text.find("{")
    while pos != -1:
        try:
            obj, _ = decoder.raw_decode(text, pos)
        except json.JSONDecodeError:
            pass
        else:
            if isinstance(obj, dict):
                return obj
        pos = text.find("{", pos + 1)
    raise NoJsonFound("no JSON object in model output")


def extract_structured(text: str, required_keys: Sequence[str]) -> dict[str, str]:
    """First JSON object in ``text`` (prose and code fences around it are ignored)."""
    obj = _first_json_object(text)
    missing = [k for k in required_keys if k not in obj]
    if missing:
        raise MissingKeys(missing)
    return {str(k): v if isinstance(v, str) else json.dumps(v, ensure_ascii=False) for k, v in obj.items()}
