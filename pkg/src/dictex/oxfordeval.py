"""Blinded pairwise judging of candidate sentences against dictionary baselines.

Each candidate competes against a reference sentence in a two-slot prompt.
Presentation order is flipped per pair with probability one half, derived
deterministically from the run seed and the pair index, so a judge with a
position preference converges to a 50% win rate instead of biasing results.
Label 0 means the candidate won, label 1 means the baseline won; blank
candidates are recorded as automatic losses without calling the judge.
"""

from __future__ import annotations

import enum
import logging
import random
from dataclasses import dataclass

from .backends import BackendError, ChatBackend, GenParams
from .corpus import WordSense
from .templating import load_template, render, validate_template

logger = logging.getLogger(__name__)

EVAL_TEMPLATE_PLACEHOLDERS = ("word", "definition", "pos", "output_a", "output_b")

IMPUTED_LOSS_VERDICT = "imputed-loss"

#: Judges run greedily so repeated audits of the record file are reproducible.
JUDGE_PARAMS = GenParams(temperature=0.0, max_tokens=32)

VERDICT_RETRIES = 2


class EvalError(Exception):
    pass


class EmptyRun(EvalError):
    """Win rate requested over no usable records."""


class UnmatchedPairs(EvalError):
    """Human labels reference pairs with no matching judge record."""


class Verdict(enum.Enum):
    PREFERS_A = "a"
    PREFERS_B = "b"
    INVALID = "invalid"


@dataclass(frozen=True)
class EvalRecord:
    """One blinded pairwise judgment; the unit of the audit log."""

    word_sense_id: str
    candidate: str
    baseline: str
    flipped: bool
    raw_verdict: str
    label: int | None  # 0 candidate preferred, 1 baseline preferred, None invalid
    judge_id: str


@dataclass(frozen=True)
class WinRateSummary:
    wins: int
    losses: int
    invalids: int
    imputed_losses: int
    win_rate: float


def build_eval_prompt(
    sense: WordSense, output_a: str, output_b: str, *, template: str | None = None
) -> str:
    """Fill the two-slot comparison prompt for one pair."""
    if not output_a or not output_b:
        raise ValueError("both outputs must be non-empty")
    if template is None:
        template = load_template("evaluation.txt", EVAL_TEMPLATE_PLACEHOLDERS)
    else:
        validate_template(template, EVAL_TEMPLATE_PLACEHOLDERS)
    return render(
        template,
        {
            "word": sense.surface_word,
            "definition": sense.definition,
            "pos": sense.pos,
            "output_a": output_a,
            "output_b": output_b,
        },
    )


def assign_presentation(pair_index: int, seed: int) -> bool:
    """Whether this pair's slots are flipped (candidate shown as Output (a)).

    Derived from (seed, pair_index) alone, so assignments are reproducible
    and independent of the order in which pairs are actually judged.
    """
    return random.Random(f"{seed}:{pair_index}").random() < 0.5


def arrange_outputs(candidate: str, baseline: str, flipped: bool) -> tuple[str, str]:
    """Slot assignment: baseline sits in slot (a) unless the pair is flipped."""
    return (candidate, baseline) if flipped else (baseline, candidate)


def parse_verdict(raw: str) -> Verdict:
    """Lenient verdict extraction: exactly one slot token must be present."""
    text = (raw or "").lower()
    has_a = "output (a)" in text
    has_b = "output (b)" in text
    if has_a == has_b:
        return Verdict.INVALID
    return Verdict.PREFERS_A if has_a else Verdict.PREFERS_B


def verdict_to_label(verdict: Verdict, flipped: bool) -> int | None:
    """Un-flip a slot verdict into a candidate/baseline label."""
    if verdict is Verdict.INVALID:
        return None
    prefers_candidate = (verdict is Verdict.PREFERS_A) == flipped
    return 0 if prefers_candidate else 1


def judge_pair(
    sense: WordSense,
    candidate: str,
    baseline: str,
    judge: ChatBackend,
    flipped: bool,
    *,
    template: str | None = None,
    verdict_retries: int = VERDICT_RETRIES,
) -> EvalRecord:
    """Judge one pair with a fixed presentation order."""
    if not baseline:
        raise ValueError("baseline must be non-empty")
    if not candidate:
        return EvalRecord(
            word_sense_id=sense.id,
            candidate=candidate,
            baseline=baseline,
            flipped=flipped,
            raw_verdict=IMPUTED_LOSS_VERDICT,
            label=1,
            judge_id=judge.identifier,
        )
    output_a, output_b = arrange_outputs(candidate, baseline, flipped)
    prompt = build_eval_prompt(sense, output_a, output_b, template=template)
    raw = ""
    verdict = Verdict.INVALID
    for _ in range(verdict_retries + 1):
        try:
            raw = judge.complete(prompt, JUDGE_PARAMS)
        except BackendError as exc:
            logger.warning("judge error for sense %s: %s", sense.id, exc)
            raw = f"<backend-error: {exc}>"
            continue
        verdict = parse_verdict(raw)
        if verdict is not Verdict.INVALID:
            break
    return EvalRecord(
        word_sense_id=sense.id,
        candidate=candidate,
        baseline=baseline,
        flipped=flipped,
        raw_verdict=raw,
        label=verdict_to_label(verdict, flipped),
        judge_id=judge.identifier,
    )


def evaluate_pair(
    sense: WordSense,
    candidate: str,
    baseline: str,
    judge: ChatBackend,
    *,
    pair_index: int,
    seed: int,
    template: str | None = None,
    verdict_retries: int = VERDICT_RETRIES,
) -> EvalRecord:
    """Judge one pair with seed-derived presentation order."""
    flipped = assign_presentation(pair_index, seed)
    return judge_pair(
        sense,
        candidate,
        baseline,
        judge,
        flipped,
        template=template,
        verdict_retries=verdict_retries,
    )


def win_rate(records: list[EvalRecord]) -> WinRateSummary:
    """Aggregate labels into a win rate; invalids drop out of the denominator."""
    if not records:
        raise EmptyRun("no evaluation records")
    wins = sum(1 for r in records if r.label == 0)
    imputed = sum(1 for r in records if r.raw_verdict == IMPUTED_LOSS_VERDICT)
    losses = sum(1 for r in records if r.label == 1) - imputed
    invalids = sum(1 for r in records if r.label is None)
    denominator = wins + losses + imputed
    if denominator == 0:
        raise EmptyRun("no valid verdicts")
    return WinRateSummary(
        wins=wins,
        losses=losses,
        invalids=invalids,
        imputed_losses=imputed,
        win_rate=wins / denominator,
    )


def agreement_rate(records: list[EvalRecord], human_labels: dict[str, int]) -> float:
    """Fraction of pairs where the judge matches the human consensus label.

    Records are matched to human labels by word-sense id; judge invalids
    count as disagreements.
    """
    by_id = {r.word_sense_id: r.label for r in records}
    missing = [pair_id for pair_id in human_labels if pair_id not in by_id]
    if missing:
        raise UnmatchedPairs(f"{len(missing)} human-labeled pairs have no judge record")
    if not human_labels:
        raise EmptyRun("no human labels")
    matches = sum(1 for pair_id, label in human_labels.items() if by_id[pair_id] == label)
    return matches / len(human_labels)


def record_to_json(record: EvalRecord) -> dict:
    return {
        "word_sense_id": record.word_sense_id,
        "candidate": record.candidate,
        "baseline": record.baseline,
        "flipped": record.flipped,
        "raw_verdict": record.raw_verdict,
        "label": record.label,
        "judge_id": record.judge_id,
    }


def record_from_json(data: dict) -> EvalRecord:
    return EvalRecord(
        word_sense_id=data["word_sense_id"],
        candidate=data["candidate"],
        baseline=data["baseline"],
        flipped=data["flipped"],
        raw_verdict=data["raw_verdict"],
        label=data["label"],
        judge_id=data["judge_id"],
    )
