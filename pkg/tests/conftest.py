from __future__ import annotations

import json

import pytest

from dictex.corpus import WordSense, sense_id


def make_sense(
    word: str,
    *,
    lemma: str | None = None,
    pos: str = "noun",
    definition: str | None = None,
    examples: tuple[str, ...] | None = None,
    frequency: int | None = None,
) -> WordSense:
    lemma = lemma or word
    definition = definition or f"meaning of {word}"
    if examples is None:
        examples = (f"The {word} was there.", f"Another {word} appeared.")
    return WordSense(
        id=sense_id(lemma, pos, definition),
        surface_word=word,
        lemma=lemma,
        pos=pos,
        definition=definition,
        examples=examples,
        frequency=frequency,
    )


def dataset_line(
    word: str,
    *,
    lemma: str | None = None,
    pos: str = "noun",
    definition: str | None = None,
    examples: list[str] | None = None,
    split: str = "validation",
) -> str:
    record = {
        "word": word,
        "lemma": lemma or word,
        "pos": pos,
        "definition": definition or f"meaning of {word}",
        "examples": examples if examples is not None else [f"The {word} was there."],
        "split": split,
    }
    return json.dumps(record, ensure_ascii=False)


def write_dataset(path, n_senses: int, *, split: str = "validation", examples_per: int = 3):
    """Synthetic dataset file: distinct senses whose examples contain the word."""
    lines = []
    for i in range(n_senses):
        word = f"word{i}"
        examples = [
            f"The {word} was plainly visible from the road that morning.",
            f"Nobody expected the {word} to matter quite so much.",
            f"A field guide described the {word} in careful detail.",
        ][:examples_per]
        lines.append(
            dataset_line(
                word,
                pos="noun",
                definition=f"sense number {i} used for testing",
                examples=examples,
                split=split,
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def airstrip_sense() -> WordSense:
    return make_sense(
        "airstrip",
        pos="noun",
        definition="a strip of ground set aside for the take-off and landing of aircraft.",
        examples=("The site has its own airstrip and light aircraft service, and its own small marina.",),
    )
