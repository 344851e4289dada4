"""Language-model service clients: greedy completion and continuation scoring.

Two implementations share one contract: an HTTP client for an external
completion-style service, and an in-process scripted backend for
deterministic offline tests. Every request/response pair is appended to the
run's event log before the result is returned.
"""

from __future__ import annotations

import hashlib
import importlib.resources
import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import requests

from .prompts import Prompt


class BackendError(Exception):
    pass


class BackendTimeout(BackendError):
    pass


class TransportFailure(BackendError):
    pass


class ContextOverflow(BackendError):
    """Pre-flight estimate exceeds the model context budget; no call is made."""


class MalformedServiceReply(BackendError):
    pass


class CapabilityUnsupported(BackendError):
    """The service cannot return continuation token log-probabilities."""


# Stop generation at a newline or the closing of the current entry.
COMPLETION_STOP_SEQUENCES = ("\n", "'}")

TOKEN_CHARS_ESTIMATE = 4  # conservative chars-per-token heuristic


@dataclass
class BackendDescriptor:
    """Connection and decoding parameters for an external model service."""

    endpoint: str = ""
    model: str = ""
    timeout: float = 60.0
    max_retries: int = 3
    temperature: float = 0.0  # greedy in replication mode
    max_output_tokens: int = 16
    context_budget_tokens: int = 8192
    api_key_env: str = "REFGAME_API_KEY"
    template: str = "llama3"  # template name under data/templates or a file path
    backoff_base: float = 0.5
    max_inflight: int = 4


def load_chat_template(name_or_path: str) -> str:
    """A format string with {system} and {user} placeholders."""
    path = Path(name_or_path)
    if path.suffix == ".txt" and path.exists():
        return path.read_text()
    resource = importlib.resources.files("refgame").joinpath(
        f"data/templates/{name_or_path}.txt"
    )
    if not resource.is_file():
        raise BackendError(f"unknown chat template {name_or_path!r}")
    return resource.read_text()


def apply_chat_template(template: str, prompt: Prompt) -> str:
    return template.format(system=prompt.system_instruction, user=prompt.user_text())


def estimate_tokens(text: str) -> int:
    return (len(text) + TOKEN_CHARS_ESTIMATE - 1) // TOKEN_CHARS_ESTIMATE


def prompt_digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]


class EventLog:
    """Append-only structured run log, one JSON record per line.

    The engine sets contextual fields (simulation id, block, round, task);
    backends and blocks append records tagged with the current context.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self.records: list[dict] = []
        self.context: dict = {}
        self._lock = threading.Lock()
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def set_context(self, **fields) -> None:
        self.context.update(fields)

    def append(self, kind: str, **fields) -> dict:
        record = {"kind": kind, **self.context, **fields}
        with self._lock:
            self.records.append(record)
            if self.path is not None:
                with self.path.open("a") as fh:
                    fh.write(json.dumps(record) + "\n")
        return record

    def of_kind(self, kind: str) -> list[dict]:
        return [r for r in self.records if r["kind"] == kind]

    @staticmethod
    def read(path: str | Path) -> list[dict]:
        return [json.loads(line) for line in Path(path).read_text().splitlines() if line]


class CompletionBackend:
    """Contract shared by scripted and wire backends.

    complete() returns the greedy continuation text for a prompt; score()
    returns the total log-probability of a continuation under the model.
    Only (text, log-probability, error) ever crosses this boundary.
    """

    event_log: EventLog | None = None

    def complete(self, prompt: Prompt) -> str:
        raise NotImplementedError

    def score(self, prompt: Prompt, continuation: str) -> float:
        raise NotImplementedError

    def _log(self, task: str, prompt_text: str, result, started: float, **extra) -> None:
        if self.event_log is None:
            return
        self.event_log.append(
            "backend_call",
            call=task,
            prompt_sha=prompt_digest(prompt_text),
            prompt=prompt_text,
            result=result,
            latency=time.monotonic() - started,
            timestamp=time.time(),
            **extra,
        )


class ScriptedBackend(CompletionBackend):
    """Deterministic in-process backend driven by tables or callables.

    completions maps rendered prompt text (or is a callable on the Prompt)
    to the continuation; scores maps (prompt text, continuation) or is a
    callable on (Prompt, continuation). fail_first injects transient
    TransportFailures for retry tests.
    """

    def __init__(
        self,
        completions: dict[str, str] | Callable[[Prompt], str] | None = None,
        scores: dict[tuple[str, str], float] | Callable[[Prompt, str], float] | None = None,
        event_log: EventLog | None = None,
        fail_first: int = 0,
    ):
        self.completions = completions
        self.scores = scores
        self.event_log = event_log
        self.fail_first = fail_first
        self.calls = 0

    def _maybe_fail(self):
        self.calls += 1
        if self.calls <= self.fail_first:
            raise TransportFailure(f"scripted transient failure #{self.calls}")

    def complete(self, prompt: Prompt) -> str:
        started = time.monotonic()
        self._maybe_fail()
        if callable(self.completions):
            text = self.completions(prompt)
        elif self.completions is not None:
            key = prompt.user_text()
            if key not in self.completions:
                raise MalformedServiceReply("no scripted completion for prompt")
            text = self.completions[key]
        else:
            raise MalformedServiceReply("scripted backend has no completion table")
        self._log("complete", prompt.user_text(), text, started)
        return text

    def score(self, prompt: Prompt, continuation: str) -> float:
        started = time.monotonic()
        self._maybe_fail()
        if callable(self.scores):
            value = self.scores(prompt, continuation)
        elif self.scores is not None:
            key = (prompt.user_text(), continuation)
            if key not in self.scores:
                raise MalformedServiceReply("no scripted score for continuation")
            value = self.scores[key]
        else:
            raise CapabilityUnsupported("scripted backend has no score table")
        if value > 0:
            raise MalformedServiceReply(f"log-probability must be <= 0, got {value}")
        self._log("score", prompt.user_text(), value, started, continuation=continuation)
        return float(value)


class RetryingBackend(CompletionBackend):
    """Wraps a backend with bounded retries and exponential backoff on
    transient transport errors. ContextOverflow and capability errors are
    not retried."""

    def __init__(self, inner: CompletionBackend, max_retries: int = 3, backoff_base: float = 0.5,
                 sleep: Callable[[float], None] = time.sleep):
        self.inner = inner
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.sleep = sleep

    @property
    def event_log(self):  # noqa: D401 - delegation
        return self.inner.event_log

    @event_log.setter
    def event_log(self, value):
        self.inner.event_log = value

    def _with_retries(self, fn):
        attempt = 0
        while True:
            try:
                return fn()
            except (TransportFailure, BackendTimeout) as err:
                attempt += 1
                if attempt > self.max_retries:
                    raise
                if self.inner.event_log is not None:
                    self.inner.event_log.append("backend_retry", attempt=attempt, error=str(err))
                self.sleep(self.backoff_base * (2 ** (attempt - 1)))

    def complete(self, prompt: Prompt) -> str:
        return self._with_retries(lambda: self.inner.complete(prompt))

    def score(self, prompt: Prompt, continuation: str) -> float:
        return self._with_retries(lambda: self.inner.score(prompt, continuation))


class HttpBackend(CompletionBackend):
    """Client for an OpenAI-style completion service.

    complete() posts the templated prompt for a greedy continuation. score()
    first tries a direct scoring call (echo + logprobs with no new tokens);
    services that reject echo-scoring surface CapabilityUnsupported.
    """

    _inflight_lock = threading.Lock()
    _inflight: dict[str, threading.Semaphore] = {}

    def __init__(self, descriptor: BackendDescriptor, event_log: EventLog | None = None,
                 session: requests.Session | None = None):
        self.descriptor = descriptor
        self.event_log = event_log
        self.session = session or requests.Session()
        self.template = load_chat_template(descriptor.template)
        with HttpBackend._inflight_lock:
            key = descriptor.endpoint or "<default>"
            if key not in HttpBackend._inflight:
                HttpBackend._inflight[key] = threading.Semaphore(descriptor.max_inflight)
            self._semaphore = HttpBackend._inflight[key]

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.descriptor.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, payload: dict) -> dict:
        url = self.descriptor.endpoint.rstrip("/") + "/v1/completions"
        try:
            with self._semaphore:
                response = self.session.post(
                    url, json=payload, headers=self._headers(), timeout=self.descriptor.timeout
                )
        except requests.Timeout as err:
            raise BackendTimeout(str(err)) from err
        except requests.RequestException as err:
            raise TransportFailure(str(err)) from err
        if response.status_code >= 500:
            raise TransportFailure(f"service error {response.status_code}")
        if response.status_code != 200:
            raise MalformedServiceReply(
                f"service returned {response.status_code}: {response.text[:200]}"
            )
        try:
            return response.json()
        except ValueError as err:
            raise MalformedServiceReply("response body is not JSON") from err

    def _check_budget(self, text: str, extra_tokens: int) -> None:
        needed = estimate_tokens(text) + extra_tokens
        if needed > self.descriptor.context_budget_tokens:
            raise ContextOverflow(
                f"estimated {needed} tokens exceeds budget {self.descriptor.context_budget_tokens}"
            )

    def complete(self, prompt: Prompt) -> str:
        full_text = apply_chat_template(self.template, prompt)
        self._check_budget(full_text, self.descriptor.max_output_tokens)
        started = time.monotonic()
        payload = {
            "model": self.descriptor.model,
            "prompt": full_text,
            "max_tokens": self.descriptor.max_output_tokens,
            "temperature": self.descriptor.temperature,
            "stop": list(COMPLETION_STOP_SEQUENCES),
        }
        reply = self._post(payload)
        try:
            text = reply["choices"][0]["text"]
        except (KeyError, IndexError, TypeError) as err:
            raise MalformedServiceReply(f"missing completion text: {reply!r}") from err
        self._log("complete", full_text, text, started)
        return text

    def score(self, prompt: Prompt, continuation: str) -> float:
        if not continuation:
            raise ValueError("continuation must be non-empty")
        full_text = apply_chat_template(self.template, prompt)
        self._check_budget(full_text + continuation, 0)
        started = time.monotonic()
        payload = {
            "model": self.descriptor.model,
            "prompt": full_text + continuation,
            "max_tokens": 0,
            "temperature": self.descriptor.temperature,
            "echo": True,
            "logprobs": 0,
        }
        reply = self._post(payload)
        try:
            logprobs = reply["choices"][0]["logprobs"]
            token_logprobs = logprobs["token_logprobs"]
            offsets = logprobs["text_offset"]
        except (KeyError, IndexError, TypeError) as err:
            raise CapabilityUnsupported(
                "service does not return echoed token log-probabilities"
            ) from err
        boundary = len(full_text)
        total = 0.0
        counted = 0
        for offset, lp in zip(offsets, token_logprobs):
            if offset >= boundary and lp is not None:
                total += lp
                counted += 1
        if counted == 0:
            raise MalformedServiceReply("no continuation tokens in echo response")
        self._log("score", full_text, total, started, continuation=continuation)
        return total


def retrying(backend: CompletionBackend, descriptor: BackendDescriptor | None = None,
             sleep: Callable[[float], None] = time.sleep) -> RetryingBackend:
    d = descriptor or BackendDescriptor()
    return RetryingBackend(backend, max_retries=d.max_retries, backoff_base=d.backoff_base, sleep=sleep)
