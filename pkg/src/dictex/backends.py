"""Clients for text-generation and masked-LM backends, plus offline mocks.

Both backend families speak a small HTTP contract so any model server can
be adapted:

* chat: ``POST /v1/complete`` with ``{prompt, temperature, top_p, top_k,
  max_tokens}`` returning ``{text}``.
* masked LM: ``POST /v1/tokenize`` with ``{text, leading_space}`` returning
  ``{token_ids, offsets}``; ``POST /v1/mask_score`` with ``{token_ids,
  mask_positions, target_ids}`` returning ``{logprobs}``.

Non-2xx statuses map onto the error taxonomy below: 429 is
:class:`RateLimited` (honouring ``Retry-After``), 408/504 are
:class:`Timeout`, 451 is :class:`Refusal`, 422 on ``/v1/mask_score`` is
:class:`VocabularyMismatch`, anything else is :class:`TransportError`.
Retry policy lives in callers, never here.
"""

from __future__ import annotations

import hashlib
import logging
import math
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Protocol, Sequence, runtime_checkable

import httpx

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT_S = 60.0
DEFAULT_CONCURRENCY = 8


class BackendError(Exception):
    """Base class for backend failures."""


class Timeout(BackendError):
    pass


class RateLimited(BackendError):
    def __init__(self, message: str = "rate limited", retry_after: float | None = None):
        super().__init__(message)
        self.retry_after = retry_after


class Refusal(BackendError):
    """The backend declined to produce content for this prompt."""


class TransportError(BackendError):
    pass


class VocabularyMismatch(BackendError):
    """A requested target token id is outside the model vocabulary."""


@dataclass(frozen=True)
class GenParams:
    """Sampling parameters for text generation."""

    temperature: float = 0.9
    top_p: float = 1.0
    top_k: int = 500
    max_tokens: int = 256

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.top_k < 1:
            raise ValueError("top_k must be a positive integer")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be a positive integer")


@dataclass(frozen=True)
class TokenizedText:
    """Token ids plus the character span each token covers in the source text."""

    token_ids: tuple[int, ...]
    offsets: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        if len(self.token_ids) != len(self.offsets):
            raise ValueError("token_ids and offsets must have equal length")
        prev_end = 0
        for start, end in self.offsets:
            if start < prev_end or end < start:
                raise ValueError("offsets must be ordered and non-overlapping")
            prev_end = end


@dataclass(frozen=True)
class MaskQuery:
    """A token sequence with some positions replaced by the mask id."""

    token_ids: tuple[int, ...]
    mask_positions: tuple[int, ...]
    target_ids: tuple[int, ...]
    mask_token_id: int

    def __post_init__(self) -> None:
        if not self.mask_positions:
            raise ValueError("at least one mask position required")
        if len(self.mask_positions) != len(self.target_ids):
            raise ValueError("one target id per mask position required")
        for pos in self.mask_positions:
            if not 0 <= pos < len(self.token_ids):
                raise ValueError(f"mask position {pos} out of range")
            if self.token_ids[pos] != self.mask_token_id:
                raise ValueError(f"position {pos} does not hold the mask id")


@dataclass(frozen=True)
class MaskScores:
    """Log-probability of the requested target id at each mask position."""

    logprobs: tuple[float, ...]

    def __post_init__(self) -> None:
        for lp in self.logprobs:
            if not math.isfinite(lp) or lp > 0:
                raise ValueError(f"logprob {lp} is not a finite non-positive real")


@runtime_checkable
class ChatBackend(Protocol):
    identifier: str

    def complete(self, prompt: str, params: GenParams) -> str: ...


@runtime_checkable
class MlmBackend(Protocol):
    identifier: str
    mask_token_id: int
    max_context: int | None

    def tokenize(self, text: str, leading_space: bool) -> TokenizedText: ...

    def mask_score(self, query: MaskQuery) -> MaskScores: ...


def _raise_for_status(response: httpx.Response) -> None:
    if response.is_success:
        return
    status = response.status_code
    if status == 429:
        retry_after = response.headers.get("Retry-After")
        hint = float(retry_after) if retry_after is not None else None
        raise RateLimited(f"HTTP {status}", retry_after=hint)
    if status in (408, 504):
        raise Timeout(f"HTTP {status}")
    if status == 451:
        raise Refusal(f"HTTP {status}: {response.text[:200]}")
    raise TransportError(f"HTTP {status}: {response.text[:200]}")


def _auth_headers(bearer_token: str | None) -> dict[str, str]:
    return {"Authorization": f"Bearer {bearer_token}"} if bearer_token else {}


class HttpChatBackend:
    """Chat-completion client; shareable across threads, bounded in-flight."""

    def __init__(
        self,
        base_url: str,
        *,
        bearer_token: str | None = None,
        timeout_s: float = DEFAULT_TIMEOUT_S,
        concurrency: int = DEFAULT_CONCURRENCY,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        self.identifier = f"http:{base_url}"
        self._client = httpx.Client(
            base_url=base_url,
            timeout=timeout_s,
            headers=_auth_headers(bearer_token),
            transport=transport,
        )
        self._slots = threading.BoundedSemaphore(concurrency)

    def complete(self, prompt: str, params: GenParams) -> str:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        body = {
            "prompt": prompt,
            "temperature": params.temperature,
            "top_p": params.top_p,
            "top_k": params.top_k,
            "max_tokens": params.max_tokens,
        }
        started = time.monotonic()
        with self._slots:
            try:
                response = self._client.post("/v1/complete", json=body)
            except httpx.TimeoutException as exc:
                raise Timeout(str(exc)) from exc
            except httpx.HTTPError as exc:
                raise TransportError(str(exc)) from exc
        _raise_for_status(response)
        try:
            text = response.json()["text"]
        except (KeyError, ValueError) as exc:
            raise TransportError(f"malformed completion body: {exc}") from exc
        logger.debug(
            "complete: %.0f ms, %d prompt chars -> %d reply chars",
            1000 * (time.monotonic() - started),
            len(prompt),
            len(text),
        )
        return text

    def close(self) -> None:
        self._client.close()


class HttpMlmBackend:
    """Masked-LM client: tokenization plus target-token scoring."""

    def __init__(
        self,
        base_url: str,
        *,
        mask_token_id: int,
        max_context: int | None = None,
        bearer_token: str | None = None,
        timeout_s: float = DEFAULT_TIMEOUT_S,
        concurrency: int = DEFAULT_CONCURRENCY,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        self.identifier = f"http:{base_url}"
        self.mask_token_id = mask_token_id
        self.max_context = max_context
        self._client = httpx.Client(
            base_url=base_url,
            timeout=timeout_s,
            headers=_auth_headers(bearer_token),
            transport=transport,
        )
        self._slots = threading.BoundedSemaphore(concurrency)

    def _post(self, path: str, body: dict) -> httpx.Response:
        with self._slots:
            try:
                return self._client.post(path, json=body)
            except httpx.TimeoutException as exc:
                raise Timeout(str(exc)) from exc
            except httpx.HTTPError as exc:
                raise TransportError(str(exc)) from exc

    def tokenize(self, text: str, leading_space: bool) -> TokenizedText:
        response = self._post("/v1/tokenize", {"text": text, "leading_space": leading_space})
        _raise_for_status(response)
        body = response.json()
        return TokenizedText(
            token_ids=tuple(body["token_ids"]),
            offsets=tuple((s, e) for s, e in body["offsets"]),
        )

    def mask_score(self, query: MaskQuery) -> MaskScores:
        body = {
            "token_ids": list(query.token_ids),
            "mask_positions": list(query.mask_positions),
            "target_ids": list(query.target_ids),
        }
        response = self._post("/v1/mask_score", body)
        if response.status_code == 422:
            raise VocabularyMismatch(response.text[:200])
        _raise_for_status(response)
        return MaskScores(logprobs=tuple(response.json()["logprobs"]))

    def close(self) -> None:
        self._client.close()


def stable_fraction(text: str) -> float:
    """Map text to a reproducible value in [0, 1); used for mock behaviour."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


@dataclass
class ChatScriptStep:
    """One canned interaction for the scripted chat mock."""

    reply: str | None = None
    error: str | None = None  # rate_limited | timeout | refusal | transport
    retry_after: float | None = None


_WORD_IN_PROMPT_RE = re.compile(r'the word "([^"]+)"')
_COUNT_IN_PROMPT_RE = re.compile(r"construct (\d+) sentences")
_OUTPUT_LINE_RE = re.compile(r"^## Output \((a|b)\): (.*)$", re.MULTILINE)

_ECHO_FRAMES = (
    "Everyone in the room agreed that {word} was the right way to describe it.",
    "She wrote {word} on the board and asked the class to use it carefully.",
    "The report mentioned {word} twice before reaching its conclusion.",
    "He could not remember where he had first heard {word} spoken aloud.",
    "Their teacher underlined {word} and read the sentence again slowly.",
    "A small note in the margin explained why {word} fit the context.",
)


class MockChatBackend:
    """Deterministic chat backend for offline tests and pipeline runs.

    Behaviour, in precedence order: consume scripted steps while any remain,
    then fall back to ``default_reply``, a slot preference (``prefer_marker``
    / ``always``), or word-echo synthesis.  ``refuse_fraction`` deterministically
    refuses that share of distinct prompts (keyed on a prompt digest), which
    makes failure injection reproducible across runs.
    """

    def __init__(
        self,
        steps: Sequence[ChatScriptStep] | None = None,
        *,
        default_reply: str | None = None,
        always: str | None = None,  # "a" or "b": fixed pairwise verdict
        prefer_marker: str | None = None,  # answer the slot containing this text
        word_echo: bool = False,
        refuse_fraction: float = 0.0,
        identifier: str = "mock:chat",
    ) -> None:
        self.identifier = identifier
        self._steps = list(steps or [])
        self._default_reply = default_reply
        self._always = always
        self._prefer_marker = prefer_marker
        self._word_echo = word_echo
        self._refuse_fraction = refuse_fraction
        self._lock = threading.Lock()
        self.calls = 0
        self._per_prompt: dict[str, int] = {}

    def complete(self, prompt: str, params: GenParams) -> str:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        with self._lock:
            self.calls += 1
            prompt_calls = self._per_prompt.get(prompt, 0)
            self._per_prompt[prompt] = prompt_calls + 1
            step = self._steps.pop(0) if self._steps else None
        if step is not None:
            return self._apply_step(step)
        if self._refuse_fraction and stable_fraction(prompt) < self._refuse_fraction:
            raise Refusal("scripted refusal")
        if self._default_reply is not None:
            return self._default_reply
        if self._always is not None:
            return f"Output ({self._always})"
        if self._prefer_marker is not None:
            return self._preferred_slot(prompt)
        if self._word_echo:
            return self._echo(prompt, prompt_calls)
        raise TransportError("mock script exhausted")

    def _apply_step(self, step: ChatScriptStep) -> str:
        if step.error == "rate_limited":
            raise RateLimited(retry_after=step.retry_after)
        if step.error == "timeout":
            raise Timeout("scripted timeout")
        if step.error == "refusal":
            raise Refusal("scripted refusal")
        if step.error == "transport":
            raise TransportError("scripted transport error")
        if step.reply is None:
            raise ValueError("script step has neither reply nor error")
        return step.reply

    def _preferred_slot(self, prompt: str) -> str:
        for slot, text in _OUTPUT_LINE_RE.findall(prompt):
            if self._prefer_marker in text:
                return f"Output ({slot})"
        return "Output (b)"

    def _echo(self, prompt: str, prompt_calls: int) -> str:
        matches = _WORD_IN_PROMPT_RE.findall(prompt)
        word = matches[-1] if matches else "something"
        count_match = _COUNT_IN_PROMPT_RE.search(prompt)
        count = int(count_match.group(1)) if count_match else 1
        base = int(stable_fraction(prompt) * len(_ECHO_FRAMES))
        parts = []
        for i in range(count):
            frame = _ECHO_FRAMES[(base + prompt_calls * count + i) % len(_ECHO_FRAMES)]
            parts.append(f"<sentence>{frame.format(word=word)}</sentence>")
        return "\n".join(parts)


class MockMlmBackend:
    """Deterministic masked-LM backend with a growable vocabulary.

    Tokenization splits on whitespace; ``subword_size`` additionally chops
    each word into fixed-size character chunks so multi-token targets can be
    exercised.  A word preceded by whitespace (or flagged with
    ``leading_space``) gets a distinct vocabulary key, mimicking
    space-sensitive subword vocabularies.

    Scoring draws per-position probabilities from, in precedence order: the
    ``score_script`` queue (one list per query), ``token_probs`` keyed by
    bare token text, a stable per-token hash when ``hash_probs`` is set, or
    ``default_prob``.
    """

    MARKER = "▁"  # leading-space marker
    CONT = "##"  # continuation-chunk marker

    def __init__(
        self,
        *,
        subword_size: int | None = None,
        token_probs: dict[str, float] | None = None,
        default_prob: float = 0.5,
        score_script: Sequence[Sequence[float]] | None = None,
        hash_probs: bool = False,
        max_context: int | None = None,
        identifier: str = "mock:mlm",
    ) -> None:
        self.identifier = identifier
        self.mask_token_id = 0
        self.max_context = max_context
        self._subword_size = subword_size
        self._token_probs = dict(token_probs or {})
        self._default_prob = default_prob
        self._score_script = [list(s) for s in (score_script or [])]
        self._hash_probs = hash_probs
        self._lock = threading.Lock()
        self._vocab: dict[str, int] = {"<mask>": 0}
        self._by_id: dict[int, str] = {0: "<mask>"}
        self.score_calls = 0

    def _intern(self, key: str) -> int:
        with self._lock:
            token_id = self._vocab.get(key)
            if token_id is None:
                token_id = len(self._vocab)
                self._vocab[key] = token_id
                self._by_id[token_id] = key
            return token_id

    @property
    def vocab_size(self) -> int:
        with self._lock:
            return len(self._vocab)

    def tokenize(self, text: str, leading_space: bool) -> TokenizedText:
        token_ids: list[int] = []
        offsets: list[tuple[int, int]] = []
        for match in re.finditer(r"\S+", text):
            word, start = match.group(0), match.start()
            spaced = leading_space if start == 0 else True
            chunks = (
                [word]
                if self._subword_size is None
                else [
                    word[i : i + self._subword_size]
                    for i in range(0, len(word), self._subword_size)
                ]
            )
            pos = start
            for index, chunk in enumerate(chunks):
                if index == 0:
                    key = (self.MARKER + chunk) if spaced else chunk
                else:
                    key = self.CONT + chunk
                token_ids.append(self._intern(key))
                offsets.append((pos, pos + len(chunk)))
                pos += len(chunk)
        return TokenizedText(token_ids=tuple(token_ids), offsets=tuple(offsets))

    def bare_token(self, token_id: int) -> str:
        key = self._by_id[token_id]
        if key.startswith(self.MARKER):
            return key[len(self.MARKER) :]
        if key.startswith(self.CONT):
            return key[len(self.CONT) :]
        return key

    def _probability(self, position: int, target_id: int, scripted: list[float] | None) -> float:
        if scripted is not None:
            return scripted[position]
        bare = self.bare_token(target_id).lower()
        if bare in self._token_probs:
            return self._token_probs[bare]
        if self._hash_probs:
            return 0.05 + 0.9 * stable_fraction(self._by_id[target_id])
        return self._default_prob

    def mask_score(self, query: MaskQuery) -> MaskScores:
        for target in query.target_ids:
            if not 0 <= target < self.vocab_size:
                raise VocabularyMismatch(f"target id {target} outside vocabulary")
        with self._lock:
            self.score_calls += 1
            scripted = self._score_script.pop(0) if self._score_script else None
        if scripted is not None and len(scripted) < len(query.mask_positions):
            raise ValueError("score script entry shorter than mask count")
        logprobs = tuple(
            math.log(self._probability(i, target, scripted))
            for i, target in enumerate(query.target_ids)
        )
        return MaskScores(logprobs=logprobs)
