"""Chat-completion access with stop-sequence pausing and transcript replay.

Every model call in the runtime goes through :class:`LLMClient`, which adds
sampling defaults, retries, per-endpoint rate limiting and stop-sequence
enforcement on top of a pluggable backend:

* :class:`ChatCompletionBackend` talks to an OpenAI-compatible HTTP endpoint.
* :class:`ScriptedBackend` answers from a recorded :class:`Transcript`.
* :class:`RecordingBackend` tees another backend's exchanges to a JSONL file.
* :class:`CallableBackend` wraps a plain function (tests, fixture builders).
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

import httpx

logger = logging.getLogger(__name__)

STOP_HIT = "stop_sequence_hit"
EOS = "eos"
LENGTH = "length_limit"
STOP_REASONS = (STOP_HIT, EOS, LENGTH)


class LLMError(Exception):
    pass


class TransportError(LLMError):
    """Network failure or 5xx reply; retryable."""

    def __init__(self, message: str, attempts: int = 1, status: int | None = None):
        super().__init__(message)
        self.attempts = attempts
        self.status = status


class RequestRejected(LLMError):
    """Non-retryable 4xx reply from the endpoint."""


class ScriptError(LLMError):
    """Replay diverged from, or ran past the end of, its script. Fatal."""


class TranscriptError(LLMError):
    """Transcript file is unreadable or corrupt."""


@dataclass(frozen=True)
class GenerationParams:
    max_new_tokens: int = 81920
    temperature: float = 0.7
    top_p: float = 0.8
    top_k: int = 20
    repetition_penalty: float = 1.05
    stop_sequences: tuple[str, ...] = ()

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if not 0.0 <= self.top_p <= 1.0:
            raise ValueError(f"top_p must be in [0, 1], got {self.top_p}")
        if self.top_k < 0:
            raise ValueError(f"top_k must be >= 0, got {self.top_k}")
        if self.max_new_tokens < 1:
            raise ValueError(f"max_new_tokens must be >= 1, got {self.max_new_tokens}")
        object.__setattr__(self, "stop_sequences", tuple(self.stop_sequences))

    def with_(self, **changes) -> GenerationParams:
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stop_sequences"] = list(self.stop_sequences)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> GenerationParams:
        return cls(**d)


@dataclass(frozen=True)
class ChatTurn:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"unknown role {self.role!r}")
        if self.content is None:
            raise ValueError("content must not be None")

    def to_dict(self) -> dict:
        return {"role": self.role, "content": self.content}


def user(content: str) -> ChatTurn:
    return ChatTurn("user", content)


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def to_dict(self) -> dict:
        return {"prompt_tokens": self.prompt_tokens, "completion_tokens": self.completion_tokens}


@dataclass(frozen=True)
class GenerationOutcome:
    text: str
    stop_reason: str
    matched_stop: str | None = None
    usage: Usage = field(default_factory=Usage)

    def __post_init__(self):
        if self.stop_reason not in STOP_REASONS:
            raise ValueError(f"unknown stop_reason {self.stop_reason!r}")
        if (self.matched_stop is not None) != (self.stop_reason == STOP_HIT):
            raise ValueError("matched_stop must be set exactly when a stop sequence was hit")


@dataclass(frozen=True)
class Request:
    """A fully specified generation request, as seen by backends."""

    messages: tuple[ChatTurn, ...]
    params: GenerationParams
    continuation: bool = False  # last message is a partial assistant turn

    def payload(self) -> dict:
        return {
            "messages": [m.to_dict() for m in self.messages],
            "params": self.params.to_dict(),
        }

    def fingerprint(self) -> str:
        raw = json.dumps(self.payload(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(raw.encode("utf-8")).hexdigest()

    def summary(self, model: str | None = None) -> dict:
        last = self.messages[-1].content
        return {
            "model": model,
            "n_messages": len(self.messages),
            "continuation": self.continuation,
            "last_message_head": last[:160],
            "last_message_tail": last[-160:],
        }


class Backend(Protocol):
    model: str | None

    def complete(self, request: Request) -> GenerationOutcome: ...


def estimate_tokens(text: str) -> int:
    """Rough token count for backends that do not report usage."""
    return (len(text) + 3) // 4


def enforce_stops(text: str, stops: Sequence[str]) -> tuple[str, str | None]:
    """Cut ``text`` right after the earliest stop-sequence occurrence."""
    best: tuple[int, int, str] | None = None
    for s in stops:
        i = text.find(s)
        if i >= 0:
            key = (i + len(s), -len(s), s)
            if best is None or key < best:
                best = key
    if best is None:
        return text, None
    return text[: best[0]], best[2]


# --------------------------------------------------------------------------
# Transcripts
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TranscriptRecord:
    fingerprint: str | None
    request_summary: dict
    text: str
    stop_reason: str
    matched_stop: str | None
    usage: Usage

    def outcome(self) -> GenerationOutcome:
        return GenerationOutcome(self.text, self.stop_reason, self.matched_stop, self.usage)

    def to_json(self) -> str:
        return json.dumps(
            {
                "fingerprint": self.fingerprint,
                "request_summary": self.request_summary,
                "text": self.text,
                "stop_reason": self.stop_reason,
                "matched_stop": self.matched_stop,
                "usage": self.usage.to_dict(),
            },
            ensure_ascii=False,
        )

    @classmethod
    def from_obj(cls, obj: dict) -> TranscriptRecord:
        usage = obj.get("usage") or {}
        return cls(
            fingerprint=obj.get("fingerprint"),
            request_summary=obj.get("request_summary") or {},
            text=obj["text"],
            stop_reason=obj["stop_reason"],
            matched_stop=obj.get("matched_stop"),
            usage=Usage(int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0))),
        )


@dataclass
class Transcript:
    records: list[TranscriptRecord] = field(default_factory=list)

    @classmethod
    def load(cls, path: str | Path) -> Transcript:
        try:
            lines = Path(path).read_text(encoding="utf-8").splitlines()
        except (OSError, UnicodeDecodeError) as exc:
            raise TranscriptError(f"cannot read transcript {path}: {exc}") from exc
        records = []
        for n, line in enumerate(lines, 1):
            if not line.strip():
                continue
            try:
                rec = TranscriptRecord.from_obj(json.loads(line))
                rec.outcome()  # validates stop_reason / matched_stop
            except (ValueError, KeyError, TypeError) as exc:
                raise TranscriptError(f"{path}:{n}: corrupt transcript record ({exc})") from exc
            records.append(rec)
        return cls(records)

    def dump(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(rec.to_json() + "\n")


def load_script(path: str | Path) -> ScriptedBackend:
    return ScriptedBackend(Transcript.load(path))


# --------------------------------------------------------------------------
# Backends
# --------------------------------------------------------------------------


class ScriptedBackend:
    """Answers requests strictly in transcript order.

    Records carrying a fingerprint must match the incoming request exactly;
    hand-written records may leave ``fingerprint`` null to skip the check.
    """

    model = "scripted"

    def __init__(self, transcript: Transcript | Iterable[TranscriptRecord | dict]):
        if not isinstance(transcript, Transcript):
            recs = [r if isinstance(r, TranscriptRecord) else TranscriptRecord.from_obj(r) for r in transcript]
            transcript = Transcript(recs)
        self.transcript = transcript
        self.cursor = 0
        self._lock = threading.Lock()

    @property
    def exhausted(self) -> bool:
        return self.cursor >= len(self.transcript.records)

    def complete(self, request: Request) -> GenerationOutcome:
        with self._lock:
            turn = self.cursor
            if turn >= len(self.transcript.records):
                raise ScriptError(f"script exhausted at turn {turn}: no record for request "
                                  f"{request.summary()['last_message_tail']!r}")
            rec = self.transcript.records[turn]
            if rec.fingerprint is not None and rec.fingerprint != request.fingerprint():
                raise ScriptError(
                    f"replay diverged at turn {turn}: expected request "
                    f"{rec.request_summary.get('last_message_tail', '')!r}, got "
                    f"{request.summary()['last_message_tail']!r}"
                )
            self.cursor += 1
            return rec.outcome()


class RecordingBackend:
    """Forwards to ``inner`` and appends every exchange to a transcript file."""

    def __init__(self, inner: Backend, path: str | Path, truncate: bool = True):
        self.inner = inner
        self.model = getattr(inner, "model", None)
        self.path = Path(path)
        self._lock = threading.Lock()
        if truncate:
            self.path.write_text("", encoding="utf-8")

    def complete(self, request: Request) -> GenerationOutcome:
        out = self.inner.complete(request)
        rec = TranscriptRecord(
            request.fingerprint(), request.summary(self.model),
            out.text, out.stop_reason, out.matched_stop, out.usage,
        )
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(rec.to_json() + "\n")
        return out


class CallableBackend:
    """Backend driven by ``fn(request) -> GenerationOutcome | str``.

    A bare string return is treated as EOS-terminated text.
    """

    def __init__(self, fn: Callable[[Request], GenerationOutcome | str], model: str = "callable"):
        self.fn = fn
        self.model = model

    def complete(self, request: Request) -> GenerationOutcome:
        out = self.fn(request)
        if isinstance(out, str):
            return GenerationOutcome(out, EOS, None, Usage(0, estimate_tokens(out)))
        return out


class ChatCompletionBackend:
    """OpenAI-compatible ``/chat/completions`` endpoint.

    Partial assistant turns are continued with the ``continue_final_message``
    request extension understood by vLLM-style servers.  With ``stream=True``
    the server-sent deltas are passed to ``on_chunk`` as they arrive and the
    stream is abandoned as soon as a stop sequence shows up.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        timeout: float = 600.0,
        stream: bool = False,
        on_chunk: Callable[[str], None] | None = None,
        transport: httpx.BaseTransport | None = None,
        extra_body: dict | None = None,
    ):
        self.model = model
        self.url = base_url.rstrip("/") + "/chat/completions"
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self.http = httpx.Client(headers=headers, timeout=timeout, transport=transport)
        self.stream = stream
        self.on_chunk = on_chunk
        self.extra_body = dict(extra_body or {})

    def body(self, request: Request) -> dict:
        p = request.params
        body = {
            "model": self.model,
            "messages": [m.to_dict() for m in request.messages],
            "max_tokens": p.max_new_tokens,
            "temperature": p.temperature,
            "top_p": p.top_p,
            "top_k": p.top_k,
            "repetition_penalty": p.repetition_penalty,
            "include_stop_str_in_output": True,
        }
        if p.stop_sequences:
            body["stop"] = list(p.stop_sequences)
        if request.continuation:
            body["continue_final_message"] = True
            body["add_generation_prompt"] = False
        if self.stream:
            body["stream"] = True
        body.update(self.extra_body)
        return body

    def _raise_for_status(self, resp: httpx.Response) -> None:
        if resp.status_code >= 500:
            raise TransportError(f"server error {resp.status_code}", status=resp.status_code)
        if resp.status_code >= 400:
            raise RequestRejected(f"request rejected with {resp.status_code}: {resp.text[:300]}")

    def complete(self, request: Request) -> GenerationOutcome:
        try:
            if self.stream:
                return self._complete_stream(request)
            resp = self.http.post(self.url, json=self.body(request))
        except httpx.TransportError as exc:
            raise TransportError(f"transport failure: {exc}") from exc
        self._raise_for_status(resp)
        data = resp.json()
        choice = data["choices"][0]
        text = (choice.get("message") or {}).get("content") or ""
        usage = data.get("usage") or {}
        return self._outcome(text, choice.get("finish_reason"), choice.get("stop_reason"),
                             request.params.stop_sequences, usage)

    def _complete_stream(self, request: Request) -> GenerationOutcome:
        stops = request.params.stop_sequences
        parts: list[str] = []
        finish = stop_reason = None
        usage: dict = {}
        with self.http.stream("POST", self.url, json=self.body(request)) as resp:
            if resp.status_code >= 400:
                resp.read()
                self._raise_for_status(resp)
            for line in resp.iter_lines():
                if not line.startswith("data:"):
                    continue
                data = line[5:].strip()
                if data == "[DONE]":
                    break
                obj = json.loads(data)
                usage = obj.get("usage") or usage
                if not obj.get("choices"):
                    continue
                choice = obj["choices"][0]
                delta = (choice.get("delta") or {}).get("content") or ""
                if delta:
                    parts.append(delta)
                    if self.on_chunk:
                        self.on_chunk(delta)
                finish = choice.get("finish_reason") or finish
                stop_reason = choice.get("stop_reason") or stop_reason
                if delta and stops and enforce_stops("".join(parts), stops)[1] is not None:
                    finish = "stop"
                    break
        return self._outcome("".join(parts), finish, stop_reason, stops, usage)

    @staticmethod
    def _outcome(text, finish, server_stop, stops, usage: dict) -> GenerationOutcome:
        text, hit = enforce_stops(text, stops)
        if hit is None and finish == "stop" and isinstance(server_stop, str) and server_stop in stops:
            # server stripped the stop string from the output
            text, hit = text + server_stop, server_stop
        if hit is not None:
            reason = STOP_HIT
        elif finish == "length":
            reason = LENGTH
        else:
            reason = EOS
        u = Usage(int(usage.get("prompt_tokens") or 0),
                  int(usage.get("completion_tokens") or estimate_tokens(text)))
        return GenerationOutcome(text, reason, hit, u)


# --------------------------------------------------------------------------
# Client
# --------------------------------------------------------------------------


class RateLimiter:
    """Minimum spacing between calls; thread-safe."""

    def __init__(self, per_second: float | None, clock=time.monotonic, sleep=time.sleep):
        self.interval = 1.0 / per_second if per_second else 0.0
        self._next = 0.0
        self._lock = threading.Lock()
        self._clock = clock
        self._sleep = sleep

    def wait(self) -> None:
        if not self.interval:
            return
        with self._lock:
            now = self._clock()
            delay = self._next - now
            self._next = max(now, self._next) + self.interval
        if delay > 0:
            self._sleep(delay)


class LLMClient:
    """Generate / continue against a backend with the runtime's policies."""

    def __init__(
        self,
        backend: Backend,
        params: GenerationParams | None = None,
        max_attempts: int = 3,
        backoff: float = 1.0,
        requests_per_second: float | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.backend = backend
        self.params = params or GenerationParams()
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.limiter = RateLimiter(requests_per_second, sleep=sleep)
        self._sleep = sleep

    def generate(self, history: Sequence[ChatTurn], params: GenerationParams | None = None) -> GenerationOutcome:
        if not history:
            raise ValueError("history must contain at least one turn")
        return self._run(Request(tuple(history), params or self.params))

    def continue_generation(
        self, history: Sequence[ChatTurn], previously_generated: str, params: GenerationParams | None = None
    ) -> GenerationOutcome:
        """Extend ``previously_generated``, a partial assistant turn."""
        if not history:
            raise ValueError("history must contain at least one turn")
        msgs = tuple(history) + (ChatTurn("assistant", previously_generated),)
        return self._run(Request(msgs, params or self.params, continuation=True))

    def _run(self, request: Request) -> GenerationOutcome:
        delay = self.backoff
        for attempt in range(1, self.max_attempts + 1):
            self.limiter.wait()
            try:
                out = self.backend.complete(request)
            except TransportError as exc:
                exc.attempts = attempt
                if attempt == self.max_attempts:
                    raise
                logger.warning("transport failure (attempt %d/%d): %s", attempt, self.max_attempts, exc)
                self._sleep(delay)
                delay *= 2
                continue
            text, hit = enforce_stops(out.text, request.params.stop_sequences)
            if text != out.text or (hit is not None and out.stop_reason != STOP_HIT):
                out = GenerationOutcome(text, STOP_HIT, hit, out.usage)
            return out
        raise AssertionError("unreachable")
