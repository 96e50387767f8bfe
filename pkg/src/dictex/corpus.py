"""Word-sense corpus handling: parsing, inflection dedup, frequencies, statistics.

The input is a line-delimited record file, one JSON object per line with
fields ``word``, ``lemma``, ``pos``, ``definition``, ``examples`` (array of
strings) and ``split``.  The dataset carries one entry per inflected form,
so several entries can describe the same (lemma, pos, definition) sense;
deduplication keeps the inflection with the most example sentences.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, replace
from typing import Iterable, Mapping

logger = logging.getLogger(__name__)

SPLITS = ("train", "validation", "test")

#: Fraction of malformed input lines above which ingestion should abort.
MALFORMED_ABORT_FRACTION = 0.01


class CorpusError(Exception):
    """Base class for corpus-level failures."""


class EmptySplit(CorpusError):
    """Statistics requested over an empty sense list."""


class NoExamples(CorpusError):
    """A baseline sentence was requested for a sense without examples."""


class TooManyMalformed(CorpusError):
    """More than the tolerated fraction of input lines failed to parse."""

    def __init__(self, malformed: int, total: int) -> None:
        super().__init__(f"{malformed} of {total} lines malformed")
        self.malformed = malformed
        self.total = total


@dataclass(frozen=True)
class MalformedRecord:
    """Diagnostic for a single unparseable input line."""

    line_no: int
    reason: str


@dataclass(frozen=True)
class RawEntry:
    """One input record: a single inflected form of a word sense."""

    surface_word: str
    lemma: str
    pos: str
    definition: str
    examples: tuple[str, ...]
    split: str
    line_no: int = 0


@dataclass(frozen=True)
class WordSense:
    """One deduplicated word sense, the unit every later stage works on."""

    id: str
    surface_word: str
    lemma: str
    pos: str
    definition: str
    examples: tuple[str, ...]
    frequency: int | None = None


@dataclass(frozen=True)
class SplitStats:
    word_senses: int
    unique_words: int
    unique_lemmas: int
    avg_examples: float


def sense_id(lemma: str, pos: str, definition: str) -> str:
    """Deterministic identifier for a (lemma, pos, definition) triplet.

    The digest is taken over the normalized triplet so re-ingesting the same
    dataset always produces the same ids.
    """
    key = "\x1f".join((lemma.strip(), pos.strip().lower(), definition.strip()))
    return hashlib.sha256(key.encode("utf-8")).hexdigest()[:16]


def parse_dataset(
    lines: Iterable[str],
    *,
    max_malformed_fraction: float | None = None,
) -> tuple[list[RawEntry], list[MalformedRecord]]:
    """Parse a line-delimited record stream into raw entries.

    Malformed lines are collected as diagnostics rather than raised; when
    ``max_malformed_fraction`` is given, the whole parse aborts with
    :class:`TooManyMalformed` once more than that fraction of non-blank
    lines is malformed.  Blank lines are skipped silently.
    """
    entries: list[RawEntry] = []
    diagnostics: list[MalformedRecord] = []
    total = 0
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        total += 1
        try:
            entries.append(_parse_line(line, line_no))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            diagnostics.append(MalformedRecord(line_no, str(exc)))
    if diagnostics:
        logger.warning("%d of %d input lines malformed", len(diagnostics), total)
    if max_malformed_fraction is not None and total:
        if len(diagnostics) > max_malformed_fraction * total:
            raise TooManyMalformed(len(diagnostics), total)
    return entries, diagnostics


def _parse_line(line: str, line_no: int) -> RawEntry:
    obj = json.loads(line)
    if not isinstance(obj, dict):
        raise ValueError("record is not an object")
    surface = _required_text(obj, "word")
    lemma = _required_text(obj, "lemma")
    definition = _required_text(obj, "definition")
    pos = str(obj.get("pos", ""))
    split = obj.get("split")
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    examples = obj.get("examples", [])
    if not isinstance(examples, list) or not all(isinstance(e, str) for e in examples):
        raise ValueError("examples must be an array of strings")
    return RawEntry(
        surface_word=surface,
        lemma=lemma,
        pos=pos,
        definition=definition,
        examples=tuple(examples),
        split=split,
        line_no=line_no,
    )


def _required_text(obj: dict, key: str) -> str:
    value = obj.get(key)
    if not isinstance(value, str) or not value.strip():
        raise ValueError(f"missing or empty field {key!r}")
    return value


def dedup_inflections(entries: Iterable[RawEntry]) -> list[WordSense]:
    """Collapse inflection entries into one sense per (lemma, pos, definition).

    Within each group the inflection with the most example sentences wins;
    ties go to the lexicographically smaller surface word.  Groups whose
    winning inflection has no examples are dropped (they cannot be compared
    against a baseline sentence later).  Output is sorted by sense id.
    """
    groups: dict[tuple[str, str, str], dict[str, list[str]]] = {}
    for entry in entries:
        key = (entry.lemma.strip(), entry.pos.strip().lower(), entry.definition.strip())
        per_surface = groups.setdefault(key, {})
        per_surface.setdefault(entry.surface_word.strip(), []).extend(entry.examples)

    senses: list[WordSense] = []
    dropped = 0
    for (lemma, pos, definition), per_surface in groups.items():
        winner = min(per_surface, key=lambda w: (-len(per_surface[w]), w))
        examples = per_surface[winner]
        if not examples:
            dropped += 1
            continue
        senses.append(
            WordSense(
                id=sense_id(lemma, pos, definition),
                surface_word=winner,
                lemma=lemma,
                pos=pos,
                definition=definition,
                examples=tuple(examples),
            )
        )
    if dropped:
        logger.info("dropped %d senses whose best inflection had no examples", dropped)
    senses.sort(key=lambda s: s.id)
    return senses


def attach_frequencies(
    senses: Iterable[WordSense], freq_table: Mapping[str, int]
) -> list[WordSense]:
    """Attach corpus occurrence counts by exact lowercase surface-word lookup."""
    return [
        replace(sense, frequency=freq_table.get(sense.surface_word.lower()))
        for sense in senses
    ]


def read_frequency_table(lines: Iterable[str]) -> dict[str, int]:
    """Read a two-column ``word<TAB>count`` table; keys are lowercased."""
    table: dict[str, int] = {}
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 2:
            logger.warning("frequency table line %d has %d columns, skipped", line_no, len(parts))
            continue
        word, count = parts
        try:
            table[word.strip().lower()] = int(count)
        except ValueError:
            logger.warning("frequency table line %d has non-integer count, skipped", line_no)
    return table


def split_stats(senses: list[WordSense]) -> SplitStats:
    """Summary counts for one dataset split.

    Unique words and lemmas are counted case-insensitively.
    """
    if not senses:
        raise EmptySplit("no word senses")
    total_examples = sum(len(s.examples) for s in senses)
    return SplitStats(
        word_senses=len(senses),
        unique_words=len({s.surface_word.lower() for s in senses}),
        unique_lemmas=len({s.lemma.lower() for s in senses}),
        avg_examples=total_examples / len(senses),
    )


def select_baseline(sense: WordSense) -> str:
    """The reference sentence a candidate competes against: the first example."""
    if not sense.examples:
        raise NoExamples(sense.id)
    return sense.examples[0]


def sense_to_json(sense: WordSense) -> dict:
    record = {
        "id": sense.id,
        "surface_word": sense.surface_word,
        "lemma": sense.lemma,
        "pos": sense.pos,
        "definition": sense.definition,
        "examples": list(sense.examples),
    }
    if sense.frequency is not None:
        record["frequency"] = sense.frequency
    return record


def sense_from_json(record: dict) -> WordSense:
    return WordSense(
        id=record["id"],
        surface_word=record["surface_word"],
        lemma=record["lemma"],
        pos=record["pos"],
        definition=record["definition"],
        examples=tuple(record["examples"]),
        frequency=record.get("frequency"),
    )
