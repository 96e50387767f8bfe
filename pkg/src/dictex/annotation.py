"""Blinded human-annotation sessions backing the web UI.

A session is a fixed, seeded sequence of blinded pairs persisted to disk.
Labels append to a write-ahead log that is fsynced before any submission is
acknowledged and replayed at startup, so an acknowledged label survives a
crash.  Payloads served to annotators never contain the flip flag or any
source attribution; un-flipping happens only at export time.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from .ioutil import atomic_write_text, json_digest, read_jsonl
from .oxfordeval import assign_presentation, arrange_outputs

logger = logging.getLogger(__name__)

SESSIONS_DIRNAME = "annotations"


class AnnotationError(Exception):
    pass


class MismatchedInputs(AnnotationError):
    """Candidate and sense files do not line up into any usable pair."""


class UnknownPair(AnnotationError):
    pass


class UnknownSession(AnnotationError):
    pass


@dataclass(frozen=True)
class AnnotationPair:
    """One blinded pair; ``flipped`` stays server-side."""

    pair_id: str
    word: str
    pos: str
    definition: str
    output_a: str
    output_b: str
    flipped: bool

    def payload(self) -> dict:
        """What an annotator may see: no flip flag, no source attribution."""
        return {
            "pair_id": self.pair_id,
            "word": self.word,
            "pos": self.pos,
            "definition": self.definition,
            "output_a": self.output_a,
            "output_b": self.output_b,
        }


@dataclass(frozen=True)
class AnnotationRecord:
    pair_id: str
    annotator_id: str
    choice: str  # "a" or "b"
    timestamp: float


@dataclass(frozen=True)
class ConsensusResult:
    kept: list[tuple[str, int]]  # (pair_id, label): 0 candidate, 1 baseline
    agreement: float
    fully_annotated: int
    under_annotated: int


def create_annotation_session(
    senses_file: Path,
    selections_file: Path,
    seed: int,
    *,
    root: Path,
    sample_size: int | None = None,
    pair_ids: list[str] | None = None,
    session_id: str | None = None,
) -> "AnnotationStore":
    """Build and persist a session of blinded pairs.

    Pairs join candidate sentences to their senses' first example sentence;
    blank candidates cannot be shown and are skipped.  ``pair_ids`` selects
    an explicit subset, ``sample_size`` a seeded uniform one.
    """
    senses = {r["id"]: r for r in read_jsonl(senses_file)}
    candidates = {
        r["word_sense_id"]: r["sentence"] for r in read_jsonl(selections_file) if r["sentence"]
    }
    shared = sorted(set(senses) & set(candidates))
    usable = [sid for sid in shared if senses[sid]["examples"]]
    if not usable:
        raise MismatchedInputs("no usable pairs: inputs share no word sense ids")

    if pair_ids is not None:
        missing = [pid for pid in pair_ids if pid not in set(usable)]
        if missing:
            raise MismatchedInputs(f"{len(missing)} requested pair ids are not usable")
        chosen = list(pair_ids)
    elif sample_size is not None:
        if sample_size > len(usable):
            raise MismatchedInputs(
                f"sample_size {sample_size} exceeds {len(usable)} usable pairs"
            )
        import random

        chosen = sorted(random.Random(f"{seed}:sample").sample(usable, sample_size))
    else:
        chosen = usable

    pairs = []
    for index, sid in enumerate(chosen):
        sense = senses[sid]
        flipped = assign_presentation(index, seed)
        output_a, output_b = arrange_outputs(candidates[sid], sense["examples"][0], flipped)
        pairs.append(
            AnnotationPair(
                pair_id=sid,
                word=sense["surface_word"],
                pos=sense["pos"],
                definition=sense["definition"],
                output_a=output_a,
                output_b=output_b,
                flipped=flipped,
            )
        )

    if session_id is None:
        session_id = json_digest({"seed": seed, "pairs": chosen})[:12]
    session_dir = root / SESSIONS_DIRNAME / session_id
    session_doc = {
        "session_id": session_id,
        "seed": seed,
        "pairs": [
            {
                "pair_id": p.pair_id,
                "word": p.word,
                "pos": p.pos,
                "definition": p.definition,
                "output_a": p.output_a,
                "output_b": p.output_b,
                "flipped": p.flipped,
            }
            for p in pairs
        ],
    }
    atomic_write_text(session_dir / "session.json", json.dumps(session_doc, indent=2) + "\n")
    logger.info("session %s created with %d pairs", session_id, len(pairs))
    return AnnotationStore(session_dir)


def list_sessions(root: Path) -> list[str]:
    base = root / SESSIONS_DIRNAME
    if not base.is_dir():
        return []
    return sorted(p.name for p in base.iterdir() if (p / "session.json").exists())


def open_session(root: Path, session_id: str) -> "AnnotationStore":
    session_dir = root / SESSIONS_DIRNAME / session_id
    if not (session_dir / "session.json").exists():
        raise UnknownSession(session_id)
    return AnnotationStore(session_dir)


class AnnotationStore:
    """One session's pairs plus its durable append-only label log."""

    def __init__(self, session_dir: Path) -> None:
        doc = json.loads((session_dir / "session.json").read_text("utf-8"))
        self.session_id: str = doc["session_id"]
        self.seed: int = doc["seed"]
        self.pairs: list[AnnotationPair] = [AnnotationPair(**p) for p in doc["pairs"]]
        self._by_id = {p.pair_id: p for p in self.pairs}
        self._log_path = session_dir / "labels.jsonl"
        self._lock = threading.Lock()
        self._records: dict[tuple[str, str], AnnotationRecord] = {}
        self._order: list[AnnotationRecord] = []
        if self._log_path.exists():
            for row in read_jsonl(self._log_path):
                record = AnnotationRecord(
                    row["pair_id"], row["annotator_id"], row["choice"], row["timestamp"]
                )
                self._remember(record)

    def _remember(self, record: AnnotationRecord) -> None:
        key = (record.pair_id, record.annotator_id)
        if key not in self._records:
            self._records[key] = record
            self._order.append(record)

    def submit(self, pair_id: str, annotator_id: str, choice: str) -> tuple[AnnotationRecord, bool]:
        """Store one label durably; replays return the stored record."""
        if choice not in ("a", "b"):
            raise ValueError("choice must be 'a' or 'b'")
        if pair_id not in self._by_id:
            raise UnknownPair(pair_id)
        key = (pair_id, annotator_id)
        with self._lock:
            existing = self._records.get(key)
            if existing is not None:
                return existing, True
            record = AnnotationRecord(pair_id, annotator_id, choice, time.time())
            line = json.dumps(
                {
                    "pair_id": record.pair_id,
                    "annotator_id": record.annotator_id,
                    "choice": record.choice,
                    "timestamp": record.timestamp,
                },
                ensure_ascii=False,
            )
            with open(self._log_path, "a", encoding="utf-8") as handle:
                handle.write(line + "\n")
                handle.flush()
                os.fsync(handle.fileno())
            self._remember(record)
            return record, False

    def next_for(self, annotator_id: str) -> tuple[int, AnnotationPair] | None:
        """First pair in session order this annotator has not labeled."""
        with self._lock:
            labeled = {pid for (pid, aid) in self._records if aid == annotator_id}
        for index, pair in enumerate(self.pairs):
            if pair.pair_id not in labeled:
                return index, pair
        return None

    def progress(self) -> dict[str, int]:
        with self._lock:
            counts: dict[str, int] = {}
            for _, annotator_id in self._records:
                counts[annotator_id] = counts.get(annotator_id, 0) + 1
        return counts

    def records(self) -> list[AnnotationRecord]:
        with self._lock:
            return list(self._order)

    def consensus(self) -> ConsensusResult:
        return consensus_filter(self)


def _choice_to_label(choice: str, flipped: bool) -> int:
    # Slot (a) holds the candidate only when the pair was flipped.
    return 0 if (choice == "a") == flipped else 1


def consensus_filter(store: AnnotationStore) -> ConsensusResult:
    """Keep pairs whose two annotators agree; export un-flipped labels.

    Pairs with fewer than two annotators are excluded and counted.  When
    more than two annotators labeled a pair, the first two in log order
    stand, matching a two-annotator protocol.
    """
    per_pair: dict[str, list[AnnotationRecord]] = {}
    for record in store.records():
        per_pair.setdefault(record.pair_id, []).append(record)

    kept: list[tuple[str, int]] = []
    fully = 0
    under = 0
    for pair in store.pairs:
        records = per_pair.get(pair.pair_id, [])
        if len(records) < 2:
            under += 1
            continue
        fully += 1
        first, second = records[0], records[1]
        if first.choice == second.choice:
            kept.append((pair.pair_id, _choice_to_label(first.choice, pair.flipped)))
    agreement = len(kept) / fully if fully else 0.0
    return ConsensusResult(
        kept=kept, agreement=agreement, fully_annotated=fully, under_annotated=under
    )
