"""Mask-and-reconstruct scoring of how well a sentence exemplifies a word.

Every whole-word occurrence of the target is replaced by mask tokens in a
single query; the score is the joint probability, under the masked LM, of
reconstructing the original tokens at every masked position.  Sentences in
which the word is hard to recover ("There was a ___ pain") score low,
sentences whose context pins the word down score high.  Accumulation stays
in log space so long sentences with many masked positions cannot underflow.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass

from .backends import MaskQuery, MlmBackend
from .genpipe import CandidateSet

logger = logging.getLogger(__name__)


class ExemplifyError(Exception):
    pass


class WordNotInSentence(ExemplifyError):
    """The target word does not occur as a whole word in the sentence."""


class TokenizationMismatch(ExemplifyError):
    """Splice offsets cannot be reconciled with backend tokenization."""


@dataclass(frozen=True)
class OccurrenceSpan:
    """One whole-word occurrence of the target, in original casing."""

    start: int
    end: int
    matched_text: str


@dataclass(frozen=True)
class ExemplificationResult:
    sentence: str
    spans: tuple[OccurrenceSpan, ...]
    mask_count: int
    per_position_logprob: tuple[float, ...]
    score: float

    def __post_init__(self) -> None:
        if not self.spans:
            raise ValueError("at least one occurrence span required")
        if len(self.per_position_logprob) != self.mask_count:
            raise ValueError("one logprob per masked position required")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


def _boundary_pattern(surface_word: str) -> re.Pattern[str]:
    # Word characters are letters, digits, and apostrophes; adjacent word
    # characters disqualify a match ("dullness", "dull's" do not contain "dull").
    letter = r"[^\W\d_]"
    return re.compile(
        rf"(?<!{letter})(?<!\d)(?<!')" + re.escape(surface_word) + rf"(?!{letter})(?!\d)(?!')",
        re.IGNORECASE,
    )


def locate_target(sentence: str, surface_word: str) -> list[OccurrenceSpan]:
    """All case-insensitive whole-word occurrences, left to right."""
    if not surface_word:
        raise ValueError("surface_word must be non-empty")
    spans = [
        OccurrenceSpan(m.start(), m.end(), m.group(0))
        for m in _boundary_pattern(surface_word).finditer(sentence)
    ]
    if not spans:
        raise WordNotInSentence(f"{surface_word!r} not found in {sentence!r}")
    return spans


def build_mask_query(
    sentence: str, spans: list[OccurrenceSpan], backend: MlmBackend
) -> MaskQuery:
    """Tokenize around the spans and mask every span's tokens in one query.

    Each span is tokenized in context (leading-space form when preceded by
    whitespace) so the target ids are exactly the ids the unmasked sentence
    would contain at those positions.
    """
    if not spans:
        raise ValueError("at least one span required")
    ordered = sorted(spans, key=lambda s: s.start)
    previous_end = 0
    for span in ordered:
        if span.start < previous_end or sentence[span.start : span.end] != span.matched_text:
            raise ValueError("spans must be non-overlapping and match the sentence")
        previous_end = span.end

    token_ids: list[int] = []
    mask_positions: list[int] = []
    target_ids: list[int] = []
    cursor = 0
    for span in ordered:
        segment = sentence[cursor : span.start]
        if segment:
            token_ids.extend(backend.tokenize(segment, leading_space=False).token_ids)
        leading_space = span.start > 0 and sentence[span.start - 1].isspace()
        word_tokens = backend.tokenize(span.matched_text, leading_space=leading_space)
        _check_span_coverage(word_tokens.offsets, span)
        for target in word_tokens.token_ids:
            mask_positions.append(len(token_ids))
            token_ids.append(backend.mask_token_id)
            target_ids.append(target)
        cursor = span.end
    tail = sentence[cursor:]
    if tail:
        token_ids.extend(backend.tokenize(tail, leading_space=False).token_ids)

    if backend.max_context is not None and len(token_ids) > backend.max_context:
        raise TokenizationMismatch(
            f"sentence needs {len(token_ids)} tokens, backend context is {backend.max_context}"
        )
    return MaskQuery(
        token_ids=tuple(token_ids),
        mask_positions=tuple(mask_positions),
        target_ids=tuple(target_ids),
        mask_token_id=backend.mask_token_id,
    )


def _check_span_coverage(offsets: tuple[tuple[int, int], ...], span: OccurrenceSpan) -> None:
    length = span.end - span.start
    if not offsets:
        raise TokenizationMismatch(f"target {span.matched_text!r} tokenized to nothing")
    if offsets[0][0] != 0 or offsets[-1][1] != length:
        raise TokenizationMismatch(
            f"target {span.matched_text!r} tokens cover {offsets}, expected [0, {length})"
        )


def exemplification_score(
    sentence: str, surface_word: str, backend: MlmBackend
) -> ExemplificationResult:
    """Joint reconstruction probability of the target word, from one pass."""
    spans = locate_target(sentence, surface_word)
    query = build_mask_query(sentence, spans, backend)
    scores = backend.mask_score(query)
    total = sum(scores.logprobs)
    return ExemplificationResult(
        sentence=sentence,
        spans=tuple(spans),
        mask_count=len(query.mask_positions),
        per_position_logprob=scores.logprobs,
        score=math.exp(total),
    )


@dataclass(frozen=True)
class Selection:
    """Outcome of picking the best candidate for one word sense."""

    word_sense_id: str
    chosen_index: int  # -1 when nothing was usable
    chosen: str  # "" when nothing was usable
    results: tuple[ExemplificationResult | None, ...]  # parallel to candidates
    fallback: bool  # chosen without a score


def select_best(
    candidate_set: CandidateSet, surface_word: str, backend: MlmBackend
) -> Selection:
    """Score every non-empty candidate and pick the highest scorer.

    Ties break toward the earliest candidate.  Candidates that do not
    contain the target word are excluded; when nothing can be scored the
    first non-empty candidate is returned un-scored as a fallback.
    """
    results: list[ExemplificationResult | None] = []
    for index, candidate in enumerate(candidate_set.candidates):
        if not candidate:
            results.append(None)
            continue
        try:
            results.append(exemplification_score(candidate, surface_word, backend))
        except WordNotInSentence:
            logger.info(
                "sense %s candidate %d lacks the target word, excluded",
                candidate_set.word_sense_id,
                index,
            )
            results.append(None)

    best_index = -1
    best_score = -1.0
    for index, result in enumerate(results):
        if result is not None and result.score > best_score:
            best_index = index
            best_score = result.score
    if best_index >= 0:
        return Selection(
            word_sense_id=candidate_set.word_sense_id,
            chosen_index=best_index,
            chosen=candidate_set.candidates[best_index],
            results=tuple(results),
            fallback=False,
        )
    for index, candidate in enumerate(candidate_set.candidates):
        if candidate:
            logger.info(
                "sense %s: no scorable candidate, falling back to candidate %d",
                candidate_set.word_sense_id,
                index,
            )
            return Selection(candidate_set.word_sense_id, index, candidate, tuple(results), True)
    logger.warning("sense %s: no usable candidate at all", candidate_set.word_sense_id)
    return Selection(candidate_set.word_sense_id, -1, "", tuple(results), True)


def select_first(candidate_set: CandidateSet) -> Selection:
    """Selection ablation: take the first non-empty candidate, unscored."""
    for index, candidate in enumerate(candidate_set.candidates):
        if candidate:
            return Selection(candidate_set.word_sense_id, index, candidate, (), True)
    return Selection(candidate_set.word_sense_id, -1, "", (), True)
