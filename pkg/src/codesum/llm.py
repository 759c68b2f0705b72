"""Chat-completion providers and the one-call-per-fragment summarizer."""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import math
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import httpx

from .dataset import CodeFragment, Corpus
from .prompt import (
    DEFAULT_PREAMBLE,
    ExtractionFailed,
    PromptTemplate,
    Summary,
    extract_first_sentence,
    render_prompt,
)
from .store import SummaryKey, SummaryRecord, SummaryStore, content_hash

logger = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")


class ErrorKind(str, enum.Enum):
    CONTEXT_LENGTH_EXCEEDED = "context_length_exceeded"
    RATE_LIMITED = "rate_limited"
    AUTH = "auth"
    NETWORK = "network"
    MALFORMED_RESPONSE = "malformed_response"


_RETRYABLE = {ErrorKind.RATE_LIMITED, ErrorKind.NETWORK}


class ProviderError(Exception):
    def __init__(self, kind: ErrorKind, detail: str, retryable: bool | None = None, fragment_id: str | None = None):
        self.kind = ErrorKind(kind)
        self.detail = detail
        self.retryable = self.kind in _RETRYABLE if retryable is None else retryable
        if self.kind is ErrorKind.CONTEXT_LENGTH_EXCEEDED:
            self.retryable = False
        self.fragment_id = fragment_id
        where = f" [{fragment_id}]" if fragment_id else ""
        super().__init__(f"{self.kind.value}{where}: {detail}")

    def for_fragment(self, fragment_id: str) -> "ProviderError":
        return ProviderError(self.kind, self.detail, self.retryable, fragment_id)


class FailureCapExceeded(RuntimeError):
    def __init__(self, failures: int, total: int, cap: float):
        self.failures, self.total, self.cap = failures, total, cap
        super().__init__(f"{failures}/{total} fragments failed, above the cap of {cap:.2%}")


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[Mapping[str, str], ...]
    max_output_tokens: int = 128
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("a chat request needs at least one message")
        for m in self.messages:
            if m.get("role") not in ROLES:
                raise ValueError(f"invalid role {m.get('role')!r}")
        if self.messages[-1]["role"] != "user":
            raise ValueError("the last message must come from the user")

    @classmethod
    def single(cls, model: str, prompt: str, **kw) -> "ChatRequest":
        return cls(model, ({"role": "user", "content": prompt},), **kw)

    def payload(self) -> dict:
        return {
            "model": self.model,
            "messages": [dict(m) for m in self.messages],
            "max_tokens": self.max_output_tokens,
            "temperature": self.temperature,
        }


def estimate_tokens(text: str) -> int:
    return math.ceil(len(text) / 4)


@dataclass
class RetryPolicy:
    max_retries: int = 5
    base_delay: float = 1.0
    max_delay: float = 30.0
    sleep: Callable[[float], None] = time.sleep

    def delay(self, attempt: int) -> float:
        return min(self.max_delay, self.base_delay * 2**attempt)


class ChatProvider:
    """Base class: subclasses implement ``_send`` for a single attempt.

    ``calls`` counts logical completions that reached the provider (a
    request rejected by the pre-flight context check is not a call);
    ``attempts`` includes retries.
    """

    provider_id = "provider"

    def __init__(self, model: str, context_limit: int | None = None,
                 token_estimator: Callable[[str], int] = estimate_tokens):
        self.model = model
        self.context_limit = context_limit
        self.token_estimator = token_estimator
        self._lock = threading.Lock()
        self.calls = 0
        self.attempts = 0
        self.retries = 0

    def _send(self, request: ChatRequest) -> str:
        raise NotImplementedError

    def _count(self, calls: int = 0, attempts: int = 0, retries: int = 0) -> None:
        with self._lock:
            self.calls += calls
            self.attempts += attempts
            self.retries += retries

    def preflight(self, request: ChatRequest) -> None:
        if self.context_limit is None:
            return
        prompt_tokens = sum(self.token_estimator(m["content"]) for m in request.messages)
        total = prompt_tokens + request.max_output_tokens
        if total > self.context_limit:
            raise ProviderError(
                ErrorKind.CONTEXT_LENGTH_EXCEEDED,
                f"This model's maximum context length is {self.context_limit} tokens. "
                f"However, you requested {total} tokens ({prompt_tokens} in the messages, "
                f"{request.max_output_tokens} in the completion). "
                "Please reduce the length of the messages or completion.",
            )


def chat_complete(provider: ChatProvider, request: ChatRequest, retry: RetryPolicy | None = None) -> str:
    """Return the assistant text for ``request``.

    Retryable failures are retried with capped exponential backoff; the
    last error surfaces once retries run out.
    """
    retry = retry or RetryPolicy()
    provider.preflight(request)
    provider._count(calls=1)
    attempt = 0
    while True:
        provider._count(attempts=1)
        try:
            return provider._send(request)
        except ProviderError as exc:
            if not exc.retryable or attempt >= retry.max_retries:
                raise
            wait = retry.delay(attempt)
            logger.warning("%s: %s; retrying in %.1fs", provider.provider_id, exc, wait)
            provider._count(retries=1)
            retry.sleep(wait)
            attempt += 1


class FixtureProvider(ChatProvider):
    """Offline provider answering from a prompt -> response map.

    Keys may be the full prompt or ``"sha256:<hex digest of the prompt>"``.
    """

    def __init__(self, responses: Mapping[str, str], model: str = "fixture",
                 provider_id: str = "fixture", context_limit: int | None = None):
        super().__init__(model, context_limit)
        self.provider_id = provider_id
        self.responses = dict(responses)
        self.prompts_seen: list[str] = []

    @staticmethod
    def prompt_key(prompt: str) -> str:
        return "sha256:" + hashlib.sha256(prompt.encode("utf-8")).hexdigest()

    @classmethod
    def from_file(cls, path: str | os.PathLike, **kw) -> "FixtureProvider":
        """Load a JSON object or JSON-lines ``{"prompt", "response"}`` file."""
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        stripped = text.lstrip()
        if stripped.startswith("{") and "\n{" not in stripped:
            return cls(json.loads(text), **kw)
        responses = {}
        for line in text.splitlines():
            if line.strip():
                rec = json.loads(line)
                responses[rec["prompt"]] = rec["response"]
        return cls(responses, **kw)

    def _send(self, request: ChatRequest) -> str:
        prompt = request.messages[-1]["content"]
        with self._lock:
            self.prompts_seen.append(prompt)
        if prompt in self.responses:
            return self.responses[prompt]
        key = self.prompt_key(prompt)
        if key in self.responses:
            return self.responses[key]
        raise ProviderError(ErrorKind.MALFORMED_RESPONSE, "no fixture response for prompt", retryable=False)


class OpenAICompatibleProvider(ChatProvider):
    """POSTs to ``<base_url>/chat/completions`` and reads ``choices[0].message.content``."""

    def __init__(self, base_url: str, model: str, api_key: str | None = None, *,
                 provider_id: str | None = None, context_limit: int | None = 4096,
                 timeout: float = 60.0, client: httpx.Client | None = None):
        super().__init__(model, context_limit)
        self.provider_id = provider_id or model
        self.url = base_url.rstrip("/") + "/chat/completions"
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self.client = client or httpx.Client(timeout=timeout)
        self.headers = headers

    def _send(self, request: ChatRequest) -> str:
        try:
            resp = self.client.post(self.url, json=request.payload(), headers=self.headers)
        except httpx.TransportError as exc:
            raise ProviderError(ErrorKind.NETWORK, str(exc)) from exc
        if resp.status_code != 200:
            raise _error_from_response(resp)
        try:
            body = resp.json()
            content = body["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProviderError(ErrorKind.MALFORMED_RESPONSE, f"unexpected response body: {exc!r}") from exc
        if not isinstance(content, str):
            raise ProviderError(ErrorKind.MALFORMED_RESPONSE, "message content is not a string")
        return content


def _error_from_response(resp: httpx.Response) -> ProviderError:
    code = message = None
    try:
        err = resp.json().get("error") or {}
        code, message = err.get("code"), err.get("message")
    except (ValueError, AttributeError):
        pass
    detail = message or resp.text[:200] or f"HTTP {resp.status_code}"
    if code == "context_length_exceeded":
        return ProviderError(ErrorKind.CONTEXT_LENGTH_EXCEEDED, detail)
    if resp.status_code == 429:
        return ProviderError(ErrorKind.RATE_LIMITED, detail)
    if resp.status_code in (401, 403):
        return ProviderError(ErrorKind.AUTH, detail)
    if resp.status_code >= 500:
        return ProviderError(ErrorKind.NETWORK, detail)
    return ProviderError(ErrorKind.MALFORMED_RESPONSE, f"HTTP {resp.status_code}: {detail}", retryable=False)


@dataclass(frozen=True)
class FailedSummary:
    fragment_id: str
    error: str


@dataclass
class SummarySet:
    """Summaries aligned with corpus order; failed fragments are listed separately."""

    items: list[Summary | None]
    fragment_ids: list[str]
    failures: list[FailedSummary] = field(default_factory=list)
    calls: int = 0
    hits: int = 0

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, i: int) -> Summary | None:
        return self.items[i]

    def ok(self) -> list[Summary]:
        return [s for s in self.items if s is not None]


def summary_key(fragment: CodeFragment, template: PromptTemplate, provider: ChatProvider) -> SummaryKey:
    return SummaryKey(content_hash(fragment.text), provider.provider_id, template.language, template.sha256)


def _request_for(fragment: CodeFragment, template: PromptTemplate, provider: ChatProvider,
                 max_output_tokens: int, temperature: float) -> ChatRequest:
    prompt = render_prompt(template, fragment.text)
    return ChatRequest.single(provider.model, prompt, max_output_tokens=max_output_tokens, temperature=temperature)


def summarize_fragment(
    fragment: CodeFragment,
    template: PromptTemplate,
    provider: ChatProvider,
    store: SummaryStore,
    *,
    max_output_tokens: int = 128,
    temperature: float = 0.0,
    retry: RetryPolicy | None = None,
) -> SummaryRecord:
    """Cached summary for ``fragment``; on a miss, exactly one completion is requested.

    Raises ProviderError (tagged with the fragment id) or ExtractionFailed;
    neither outcome is written to the store.
    """
    key = summary_key(fragment, template, provider)
    hit = store.get(key)
    if hit is not None:
        return hit
    request = _request_for(fragment, template, provider, max_output_tokens, temperature)
    try:
        response = chat_complete(provider, request, retry)
    except ProviderError as exc:
        raise exc.for_fragment(fragment.id) from exc
    text = extract_first_sentence(response, template.language)
    first_line = response.strip().splitlines()[0].strip() if response.strip() else ""
    preamble = bool(DEFAULT_PREAMBLE.search(first_line)) and text != first_line
    record = SummaryRecord(key, Summary(text, fragment.id, template.language), preamble_skipped=preamble)
    store.put(record)
    return record


def summarize_corpus(
    corpus: Corpus,
    template: PromptTemplate,
    provider: ChatProvider,
    store: SummaryStore,
    parallelism: int = 1,
    *,
    failure_cap: float = 0.01,
    max_output_tokens: int = 128,
    temperature: float = 0.0,
    retry: RetryPolicy | None = None,
) -> SummarySet:
    """Summarize every fragment with at most one completion per distinct source text.

    Authentication errors abort immediately; other failures are collected
    and only raise :class:`FailureCapExceeded` when their share of the
    corpus exceeds ``failure_cap``.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")

    keys = [summary_key(f, template, provider) for f in corpus]
    hits = sum(1 for k in keys if store.get(k) is not None)
    todo: dict[SummaryKey, CodeFragment] = {}
    for frag, key in zip(corpus, keys):
        if store.get(key) is None and key not in todo:
            todo[key] = frag

    calls_before = provider.calls
    outcomes: dict[SummaryKey, Exception] = {}

    def work(frag: CodeFragment) -> None:
        try:
            summarize_fragment(frag, template, provider, store, max_output_tokens=max_output_tokens,
                               temperature=temperature, retry=retry)
        except ProviderError as exc:
            if exc.kind is ErrorKind.AUTH:
                raise
            outcomes[summary_key(frag, template, provider)] = exc
        except ExtractionFailed as exc:
            outcomes[summary_key(frag, template, provider)] = exc

    if parallelism == 1:
        for frag in todo.values():
            work(frag)
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            for fut in [pool.submit(work, f) for f in todo.values()]:
                fut.result()
    store.flush()

    items: list[Summary | None] = []
    failures = []
    for frag, key in zip(corpus, keys):
        rec = store.get(key)
        if rec is None:
            exc = outcomes.get(key)
            failures.append(FailedSummary(frag.id, str(exc) if exc else "missing summary"))
            items.append(None)
            continue
        s = rec.summary
        items.append(s if s.fragment_id == frag.id else Summary(s.text, frag.id, s.prompt_language, s.stopwords_removed))

    result = SummarySet(items, corpus.ids, failures, calls=provider.calls - calls_before, hits=hits)
    if failures:
        logger.warning("%d of %d fragments failed to summarize", len(failures), len(corpus))
    if len(corpus) and len(failures) / len(corpus) > failure_cap:
        err = FailureCapExceeded(len(failures), len(corpus), failure_cap)
        err.result = result  # type: ignore[attr-defined]
        raise err
    return result
