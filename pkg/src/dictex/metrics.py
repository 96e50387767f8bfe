"""Sentence length and readability metrics, with cohort and subgroup summaries."""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from typing import Iterable, Sequence

from .backends import MlmBackend
from .corpus import WordSense
from .oxfordeval import EvalRecord, WinRateSummary, win_rate

# Grade-level formula constants (words per sentence, syllables per word).
FKGL_WORDS_WEIGHT = 0.39
FKGL_SYLLABLES_WEIGHT = 11.8
FKGL_OFFSET = 15.59

_VOWELS = frozenset("aeiouy")


class MetricsError(Exception):
    pass


class EmptySentence(MetricsError):
    pass


class EmptyCohort(MetricsError):
    pass


@dataclass(frozen=True)
class SentenceMetrics:
    word_count: int
    syllable_count: int
    fkgl: float


@dataclass(frozen=True)
class CohortSummary:
    n: int
    words_avg: float
    words_sd: float
    fkgl_avg: float
    fkgl_sd: float


def word_count(sentence: str) -> int:
    """Maximal runs of non-whitespace characters."""
    return len(sentence.split())


def syllable_count(word: str) -> int:
    """Heuristic syllables: vowel groups, minus a trailing silent 'e' group.

    Only letters are considered; y counts as a vowel.  Any word containing a
    letter counts at least one syllable.
    """
    letters = "".join(ch for ch in word.lower() if ch.isalpha())
    if not letters:
        raise ValueError(f"no letters in {word!r}")
    groups = 0
    in_group = False
    last_group_end = -1
    last_group_len = 0
    for i, ch in enumerate(letters):
        if ch in _VOWELS:
            if not in_group:
                groups += 1
                in_group = True
                last_group_len = 0
            last_group_len += 1
            last_group_end = i
        else:
            in_group = False
    if (
        groups > 1
        and last_group_end == len(letters) - 1
        and last_group_len == 1
        and letters[-1] == "e"
    ):
        groups -= 1
    return max(groups, 1)


def _token_syllables(token: str) -> int:
    # Tokens without letters (numbers, stray punctuation) are spoken as one unit.
    if any(ch.isalpha() for ch in token):
        return syllable_count(token)
    return 1


def fkgl(sentence: str) -> float:
    """Grade level of a single sentence: length and syllable density."""
    tokens = sentence.split()
    if not tokens:
        raise EmptySentence(repr(sentence))
    words = len(tokens)
    syllables = sum(_token_syllables(t) for t in tokens)
    return FKGL_WORDS_WEIGHT * words + FKGL_SYLLABLES_WEIGHT * (syllables / words) - FKGL_OFFSET


def sentence_metrics(sentence: str) -> SentenceMetrics:
    tokens = sentence.split()
    if not tokens:
        raise EmptySentence(repr(sentence))
    return SentenceMetrics(
        word_count=len(tokens),
        syllable_count=sum(_token_syllables(t) for t in tokens),
        fkgl=fkgl(sentence),
    )


def summarize(sentences: Iterable[str]) -> CohortSummary:
    """Average and population SD of length and grade level over a cohort.

    Empty sentences are excluded from the aggregation.
    """
    kept = [s for s in sentences if s.strip()]
    if not kept:
        raise EmptyCohort("no non-empty sentences")
    words = [float(word_count(s)) for s in kept]
    grades = [fkgl(s) for s in kept]
    return CohortSummary(
        n=len(kept),
        words_avg=statistics.fmean(words),
        words_sd=statistics.pstdev(words),
        fkgl_avg=statistics.fmean(grades),
        fkgl_sd=statistics.pstdev(grades),
    )


@dataclass(frozen=True)
class SubgroupReport:
    key: str
    n_senses: int
    summary: WinRateSummary | None
    cohort: CohortSummary | None


def _report_for(key: str, senses: Sequence[WordSense], records: list[EvalRecord]) -> SubgroupReport:
    ids = {s.id for s in senses}
    group_records = [r for r in records if r.word_sense_id in ids]
    summary = None
    cohort = None
    if group_records:
        summary = win_rate(group_records)
        candidates = [r.candidate for r in group_records if r.candidate]
        if candidates:
            cohort = summarize(candidates)
    return SubgroupReport(key=key, n_senses=len(senses), summary=summary, cohort=cohort)


def subgroup_split(
    senses: list[WordSense],
    records: list[EvalRecord],
    mlm_backend: MlmBackend | None = None,
) -> list[SubgroupReport]:
    """Win rate and cohort summaries per subgroup.

    Splits senses into single- versus multi-token surface words under the
    MLM tokenizer (skipped when no backend is given) and into monosemous
    versus polysemous (lemma, pos) groups within the provided dataset.
    """
    reports: list[SubgroupReport] = []
    if mlm_backend is not None:
        single = []
        multi = []
        for sense in senses:
            tokens = mlm_backend.tokenize(sense.surface_word, leading_space=True)
            (single if len(tokens.token_ids) == 1 else multi).append(sense)
        reports.append(_report_for("token:single", single, records))
        reports.append(_report_for("token:multi", multi, records))

    sense_counts: dict[tuple[str, str], int] = {}
    for sense in senses:
        key = (sense.lemma.lower(), sense.pos)
        sense_counts[key] = sense_counts.get(key, 0) + 1
    monosemous = [s for s in senses if sense_counts[(s.lemma.lower(), s.pos)] == 1]
    polysemous = [s for s in senses if sense_counts[(s.lemma.lower(), s.pos)] > 1]
    reports.append(_report_for("sense:monosemous", monosemous, records))
    reports.append(_report_for("sense:polysemous", polysemous, records))
    return reports


def render_report(
    win: WinRateSummary,
    cohorts: dict[str, CohortSummary],
    subgroups: list[SubgroupReport],
) -> str:
    """Fixed-width text report: win rate, length/readability, subgroup tables."""
    lines = []
    lines.append("== win rate ==")
    lines.append(
        f"win_rate {win.win_rate:.4f}  wins {win.wins}  losses {win.losses}"
        f"  imputed_losses {win.imputed_losses}  invalids {win.invalids}"
    )
    lines.append("")
    lines.append("== cohorts ==")
    header = f"{'cohort':<24} {'n':>6} {'words_avg':>10} {'words_sd':>9} {'fkgl_avg':>9} {'fkgl_sd':>8}"
    lines.append(header)
    for name, cohort in cohorts.items():
        lines.append(
            f"{name:<24} {cohort.n:>6} {cohort.words_avg:>10.2f} {cohort.words_sd:>9.2f}"
            f" {cohort.fkgl_avg:>9.2f} {cohort.fkgl_sd:>8.2f}"
        )
    lines.append("")
    lines.append("== subgroups ==")
    lines.append(f"{'subgroup':<20} {'senses':>7} {'win_rate':>9} {'words_avg':>10} {'fkgl_avg':>9}")
    for report in subgroups:
        rate = f"{report.summary.win_rate:.4f}" if report.summary else "-"
        words_avg = f"{report.cohort.words_avg:.2f}" if report.cohort else "-"
        fkgl_avg = f"{report.cohort.fkgl_avg:.2f}" if report.cohort else "-"
        lines.append(
            f"{report.key:<20} {report.n_senses:>7} {rate:>9} {words_avg:>10} {fkgl_avg:>9}"
        )
    lines.append("")
    return "\n".join(lines)
