"""Candidate sentence generation: prompts, retries, and blank imputation.

Generation accumulates a fixed number of candidate sentences per word
sense, either one request per sentence or a single batched request.  A
request fails when the reply contains no well-formed sentence tag or the
backend refuses; after the cumulative failure budget is spent the sense is
abandoned and recorded as an all-blank candidate set, which downstream
stages treat as an automatic loss.  Transient transport problems are
retried with exponential backoff on a separate budget so that rate limits
never eat into the format-failure allowance.
"""

from __future__ import annotations

import logging
import re
import time
from dataclasses import dataclass, field
from typing import Callable

from .backends import (
    ChatBackend,
    GenParams,
    RateLimited,
    Refusal,
    Timeout,
    TransportError,
)
from .corpus import WordSense
from .templating import load_template, render

logger = logging.getLogger(__name__)

BATCHING_MODES = ("one_by_one", "batched")
INPUT_MODES = ("pos_and_def", "def_only", "pos_only")

#: Transport-level retry defaults, separate from the format-failure budget.
TRANSPORT_RETRIES = 5
BACKOFF_BASE_S = 1.0
BACKOFF_FACTOR = 2.0

_SENTENCE_RE = re.compile(r"<sentence>(.*?)</sentence>", re.DOTALL | re.IGNORECASE)
_POS_BLOCK_RE = re.compile(r"<part-of-speech>\s*\{pos\}\s*</part-of-speech>\n?")
_DEF_BLOCK_RE = re.compile(r"<definition>\s*\{definition\}\s*</definition>\n?")


@dataclass(frozen=True)
class GenConfig:
    """Knobs for candidate generation; every search-space axis is a field."""

    num_sentences: int = 5
    batching: str = "one_by_one"
    inputs: str = "pos_and_def"
    max_retries: int = 10
    params: GenParams = field(default_factory=GenParams)

    def __post_init__(self) -> None:
        if not 1 <= self.num_sentences <= 5:
            raise ValueError("num_sentences must be between 1 and 5")
        if self.batching not in BATCHING_MODES:
            raise ValueError(f"batching must be one of {BATCHING_MODES}")
        if self.inputs not in INPUT_MODES:
            raise ValueError(f"inputs must be one of {INPUT_MODES}")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@dataclass(frozen=True)
class CandidateSet:
    """Generated sentences for one word sense plus generation bookkeeping."""

    word_sense_id: str
    candidates: tuple[str, ...]
    attempts: int
    failures: int
    imputed: bool

    def __post_init__(self) -> None:
        all_blank = all(c == "" for c in self.candidates)
        if self.imputed != all_blank:
            raise ValueError("imputed flag must match an entirely blank candidate list")


def build_generation_prompt(
    sense: WordSense, config: GenConfig, *, template: str | None = None
) -> str:
    """Render the generation prompt for one sense under the given config.

    The input-ablation modes drop the corresponding tagged block from the
    task section; the fixed exemplar block is kept in every mode.
    """
    if template is None:
        if config.batching == "batched":
            template = load_template(
                "generation_batched.txt", ("word", "definition", "pos", "count")
            )
        else:
            template = load_template("generation.txt", ("word", "definition", "pos"))
    if config.inputs == "def_only":
        template = _POS_BLOCK_RE.sub("", template)
    elif config.inputs == "pos_only":
        template = _DEF_BLOCK_RE.sub("", template)
    return render(
        template,
        {
            "word": sense.surface_word,
            "definition": sense.definition,
            "pos": sense.pos,
            "count": str(config.num_sentences),
        },
    )


def parse_generation_response(raw: str) -> list[str]:
    """Extract the contents of well-formed sentence tags, in order.

    An empty list signals a format failure to the caller; blank tag bodies
    are discarded because a blank candidate means imputation downstream.
    """
    return [m.strip() for m in _SENTENCE_RE.findall(raw or "") if m.strip()]


def generate_candidates(
    sense: WordSense,
    config: GenConfig,
    backend: ChatBackend,
    *,
    template: str | None = None,
    transport_retries: int = TRANSPORT_RETRIES,
    backoff_base_s: float = BACKOFF_BASE_S,
    backoff_factor: float = BACKOFF_FACTOR,
    sleep: Callable[[float], None] = time.sleep,
) -> CandidateSet:
    """Generate candidates for one sense under the retry/imputation policy.

    ``attempts`` counts every request actually issued, including transport
    retries.  Abandonment (failure budget spent, or transport retries
    exhausted) yields an all-blank, ``imputed`` candidate set.
    """
    prompt = build_generation_prompt(sense, config, template=template)
    need = config.num_sentences
    candidates: list[str] = []
    attempts = 0
    failures = 0
    abandoned = False

    def call_with_transport_retry() -> str:
        nonlocal attempts
        delay = backoff_base_s
        for round_no in range(transport_retries + 1):
            attempts += 1
            try:
                return backend.complete(prompt, config.params)
            except (RateLimited, Timeout, TransportError) as exc:
                if round_no == transport_retries:
                    raise
                wait = getattr(exc, "retry_after", None)
                sleep(wait if wait is not None else delay)
                delay *= backoff_factor
        raise TransportError("unreachable")  # pragma: no cover

    while len(candidates) < need:
        try:
            raw = call_with_transport_retry()
        except (RateLimited, Timeout, TransportError) as exc:
            logger.warning("sense %s abandoned after transport retries: %s", sense.id, exc)
            abandoned = True
            break
        except Refusal:
            failures += 1
        else:
            sentences = parse_generation_response(raw)
            if config.batching == "batched":
                if len(sentences) >= need:
                    candidates = sentences[:need]
                else:
                    failures += 1
            elif sentences:
                candidates.append(sentences[0])
            else:
                failures += 1
        if failures >= max(config.max_retries, 1) and len(candidates) < need:
            logger.info("sense %s abandoned after %d failed attempts", sense.id, failures)
            abandoned = True
            break

    if abandoned:
        candidates = [""] * need
    return CandidateSet(
        word_sense_id=sense.id,
        candidates=tuple(candidates),
        attempts=attempts,
        failures=failures,
        imputed=abandoned,
    )


def candidate_set_to_json(cs: CandidateSet) -> dict:
    return {
        "word_sense_id": cs.word_sense_id,
        "candidates": list(cs.candidates),
        "attempts": cs.attempts,
        "failures": cs.failures,
        "imputed": cs.imputed,
    }


def candidate_set_from_json(record: dict) -> CandidateSet:
    return CandidateSet(
        word_sense_id=record["word_sense_id"],
        candidates=tuple(record["candidates"]),
        attempts=record["attempts"],
        failures=record["failures"],
        imputed=record["imputed"],
    )
