"""Stage orchestration: resumable, manifest-tracked runs over disk artifacts.

Stages write line-delimited artifacts atomically into a stage directory and
record themselves in a manifest (config digest, seed, backend identifiers,
input digests, output digests).  Re-running a stage whose manifest entry
still matches its inputs is a no-op that touches nothing and calls no
backend; artifacts that diverge from the manifest fail fast instead of
silently feeding a stale file forward.
"""

from __future__ import annotations

import json
import logging
import os
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Literal

from pydantic import BaseModel, Field

from . import corpus, exemplify, genpipe, metrics, oxfordeval
from .backends import (
    ChatBackend,
    ChatScriptStep,
    HttpChatBackend,
    HttpMlmBackend,
    MlmBackend,
    MockChatBackend,
    MockMlmBackend,
)
from .ioutil import atomic_write_text, file_digest, json_digest, read_jsonl, write_jsonl

logger = logging.getLogger(__name__)

STAGE_ORDER = ("preprocess", "generate", "score", "evaluate", "report")

MANIFEST_NAME = "manifest.json"

STAGE_ARTIFACTS: dict[str, tuple[str, ...]] = {
    "preprocess": ("senses.jsonl", "corpus_stats.json"),
    "generate": ("candidates.jsonl",),
    "score": ("scores.jsonl", "selections.jsonl"),
    "evaluate": ("eval_records.jsonl",),
    "report": ("report.txt", "report.json", "sentence_metrics.jsonl"),
}

_PRODUCER = {
    name: stage for stage, names in STAGE_ARTIFACTS.items() for name in names
}


class PipelineError(Exception):
    pass


class MissingUpstream(PipelineError):
    """A required upstream artifact does not exist yet."""


class StaleUpstream(PipelineError):
    """An upstream artifact no longer matches the digest its stage recorded."""


class MockChatSpec(BaseModel):
    mode: Literal["word_echo", "canned", "always_a", "always_b", "prefer_marker"] = "word_echo"
    replies: list[str] = Field(default_factory=list)
    marker: str | None = None
    refuse_fraction: float = 0.0


class ChatBackendSpec(BaseModel):
    kind: Literal["http", "mock"] = "mock"
    url: str | None = None
    bearer_token_env: str | None = None
    timeout_s: float = 60.0
    concurrency: int = 8
    mock: MockChatSpec = MockChatSpec()

    def identifier(self) -> str:
        return f"http:{self.url}" if self.kind == "http" else f"mock:{self.mock.mode}"


class MockMlmSpec(BaseModel):
    subword_size: int | None = None
    default_prob: float = 0.5
    token_probs: dict[str, float] = Field(default_factory=dict)
    hash_probs: bool = True


class MlmBackendSpec(BaseModel):
    kind: Literal["http", "mock"] = "mock"
    url: str | None = None
    mask_token_id: int = 0
    max_context: int | None = None
    bearer_token_env: str | None = None
    timeout_s: float = 60.0
    concurrency: int = 8
    mock: MockMlmSpec = MockMlmSpec()

    def identifier(self) -> str:
        return f"http:{self.url}" if self.kind == "http" else "mock:mlm"


class BackendsConfig(BaseModel):
    generator: ChatBackendSpec = ChatBackendSpec()
    mlm: MlmBackendSpec = MlmBackendSpec()
    judge: ChatBackendSpec = ChatBackendSpec(mock=MockChatSpec(mode="always_a"))


class RunConfig(BaseModel):
    """Everything one run needs; the seed is mandatory by design."""

    dataset: Path
    frequency_table: Path | None = None
    split: Literal["train", "validation", "test"] = "validation"
    seed: int
    stage_dir: Path
    generation: genpipe.GenConfig = genpipe.GenConfig()
    selection: Literal["mlm_score", "first_sentence"] = "mlm_score"
    score_source: Literal["generated", "examples"] = "generated"
    baseline: Literal["first", "random", "file"] = "first"
    baseline_file: Path | None = None
    candidates_file: Path | None = None
    backends: BackendsConfig = BackendsConfig()

    def referenced_paths(self, stage: str) -> list[Path]:
        paths: list[Path] = []
        if stage == "preprocess":
            paths.append(self.dataset)
            if self.frequency_table is not None:
                paths.append(self.frequency_table)
        if stage == "evaluate":
            if self.baseline == "file" and self.baseline_file is not None:
                paths.append(self.baseline_file)
            if self.candidates_file is not None:
                paths.append(self.candidates_file)
        return paths


def load_config(path: Path) -> RunConfig:
    return RunConfig.model_validate(json.loads(Path(path).read_text("utf-8")))


def build_chat_backend(spec: ChatBackendSpec) -> ChatBackend:
    if spec.kind == "http":
        if not spec.url:
            raise ValueError("http chat backend requires a url")
        return HttpChatBackend(
            spec.url,
            bearer_token=_token_from_env(spec.bearer_token_env),
            timeout_s=spec.timeout_s,
            concurrency=spec.concurrency,
        )
    mock = spec.mock
    if mock.mode == "canned":
        return MockChatBackend(
            [ChatScriptStep(reply=r) for r in mock.replies],
            refuse_fraction=mock.refuse_fraction,
            identifier=spec.identifier(),
        )
    return MockChatBackend(
        default_reply=None,
        always={"always_a": "a", "always_b": "b"}.get(mock.mode),
        prefer_marker=mock.marker if mock.mode == "prefer_marker" else None,
        word_echo=mock.mode == "word_echo",
        refuse_fraction=mock.refuse_fraction,
        identifier=spec.identifier(),
    )


def build_mlm_backend(spec: MlmBackendSpec) -> MlmBackend:
    if spec.kind == "http":
        if not spec.url:
            raise ValueError("http mlm backend requires a url")
        return HttpMlmBackend(
            spec.url,
            mask_token_id=spec.mask_token_id,
            max_context=spec.max_context,
            bearer_token=_token_from_env(spec.bearer_token_env),
            timeout_s=spec.timeout_s,
            concurrency=spec.concurrency,
        )
    mock = spec.mock
    return MockMlmBackend(
        subword_size=mock.subword_size,
        default_prob=mock.default_prob,
        token_probs=mock.token_probs,
        hash_probs=mock.hash_probs,
        max_context=spec.max_context,
        identifier=spec.identifier(),
    )


def _token_from_env(name: str | None) -> str | None:
    return os.environ.get(name) if name else None


@dataclass
class StageResult:
    stage: str
    skipped: bool
    artifacts: list[Path]
    summary: dict


def _load_manifest(stage_dir: Path) -> dict:
    path = stage_dir / MANIFEST_NAME
    if path.exists():
        return json.loads(path.read_text("utf-8"))
    return {"stages": {}}


def _save_manifest(stage_dir: Path, manifest: dict) -> None:
    atomic_write_text(stage_dir / MANIFEST_NAME, json.dumps(manifest, indent=2) + "\n")


def _stage_config(config: RunConfig, stage: str) -> dict:
    """The slice of the config a stage actually depends on.

    The seed only belongs to the evaluate slice: flips and random baselines
    are the only seeded decisions, so re-seeding re-runs nothing upstream.
    """
    dump = config.model_dump(mode="json")
    fields = {
        "preprocess": ("dataset", "frequency_table", "split"),
        "generate": ("generation",),
        "score": ("selection", "score_source"),
        "evaluate": ("baseline", "baseline_file", "candidates_file", "seed"),
        "report": (),
    }[stage]
    return {name: dump[name] for name in fields}


def _backend_ids(config: RunConfig, stage: str) -> dict[str, str]:
    if stage == "generate":
        return {"generator": config.backends.generator.identifier()}
    if stage == "score":
        if config.selection == "mlm_score":
            return {"mlm": config.backends.mlm.identifier()}
        return {}
    if stage == "evaluate":
        return {"judge": config.backends.judge.identifier()}
    if stage == "report":
        return {"mlm": config.backends.mlm.identifier()}
    return {}


def _required_artifacts(config: RunConfig, stage: str) -> tuple[str, ...]:
    if stage == "preprocess":
        return ()
    if stage == "generate":
        return ("senses.jsonl",)
    if stage == "score":
        if config.score_source == "examples":
            return ("senses.jsonl",)
        return ("senses.jsonl", "candidates.jsonl")
    if stage == "evaluate":
        if config.candidates_file is not None:
            return ("senses.jsonl",)
        return ("senses.jsonl", "selections.jsonl")
    if stage == "report":
        return ("senses.jsonl", "selections.jsonl", "eval_records.jsonl")
    raise ValueError(f"unknown stage {stage!r}")


def run_stage(config: RunConfig, stage: str, *, force: bool = False) -> StageResult:
    """Run one stage, or skip it when its manifest entry is still current."""
    if stage not in STAGE_ORDER:
        raise ValueError(f"unknown stage {stage!r}; expected one of {STAGE_ORDER}")
    for path in config.referenced_paths(stage):
        if not path.exists():
            raise PipelineError(f"configured path does not exist: {path}")
    stage_dir = config.stage_dir
    stage_dir.mkdir(parents=True, exist_ok=True)
    manifest = _load_manifest(stage_dir)

    inputs: dict[str, str] = {}
    for name in _required_artifacts(config, stage):
        path = stage_dir / name
        if not path.exists():
            raise MissingUpstream(f"stage {stage!r} needs {name}; run {_PRODUCER[name]!r} first")
        recorded = manifest["stages"].get(_PRODUCER[name], {}).get("outputs", {}).get(name)
        digest = file_digest(path)
        if recorded is None:
            raise StaleUpstream(f"{name} exists but has no manifest entry; re-run {_PRODUCER[name]!r}")
        if recorded != digest:
            raise StaleUpstream(f"{name} changed since {_PRODUCER[name]!r} ran")
        inputs[name] = digest
    for path in config.referenced_paths(stage):
        inputs[f"external:{path}"] = file_digest(path)

    entry = {
        "config": json_digest(_stage_config(config, stage)),
        "seed": config.seed,
        "backends": _backend_ids(config, stage),
        "inputs": inputs,
    }
    existing = manifest["stages"].get(stage)
    artifacts = [stage_dir / name for name in STAGE_ARTIFACTS[stage]]
    if not force and existing is not None:
        # the recorded seed is informational; seed-dependence lives in the
        # evaluate stage's config slice
        unchanged = all(
            existing.get(key) == entry[key] for key in ("config", "backends", "inputs")
        )
        outputs_ok = all(
            path.exists() and existing.get("outputs", {}).get(path.name) == file_digest(path)
            for path in artifacts
        )
        if unchanged and outputs_ok:
            logger.info("stage %s is up to date, skipping", stage)
            return StageResult(stage, True, artifacts, existing.get("summary", {}))

    summary = _STAGE_FNS[stage](config)
    entry["outputs"] = {path.name: file_digest(path) for path in artifacts}
    entry["summary"] = summary
    manifest["stages"][stage] = entry
    _save_manifest(stage_dir, manifest)
    return StageResult(stage, False, artifacts, summary)


def run_stages(config: RunConfig, stages: list[str] | None = None, *, force: bool = False) -> list[StageResult]:
    return [run_stage(config, stage, force=force) for stage in (stages or STAGE_ORDER)]


def audit_artifacts(stage_dir: Path) -> list[str]:
    """Names of files under the stage dir that no manifest entry accounts for."""
    manifest = _load_manifest(stage_dir)
    known = {MANIFEST_NAME}
    for entry in manifest["stages"].values():
        known.update(entry.get("outputs", {}))
    orphans = []
    for path in sorted(stage_dir.iterdir()):
        if path.is_dir():
            continue  # session stores and UI bundles live in subdirectories
        if path.name not in known:
            orphans.append(path.name)
    return orphans


def _read_senses(config: RunConfig) -> list[corpus.WordSense]:
    return [corpus.sense_from_json(r) for r in read_jsonl(config.stage_dir / "senses.jsonl")]


def _stage_preprocess(config: RunConfig) -> dict:
    with open(config.dataset, encoding="utf-8") as handle:
        entries, diagnostics = corpus.parse_dataset(
            handle, max_malformed_fraction=corpus.MALFORMED_ABORT_FRACTION
        )
    entries = [e for e in entries if e.split == config.split]
    senses = corpus.dedup_inflections(entries)
    if config.frequency_table is not None:
        with open(config.frequency_table, encoding="utf-8") as handle:
            senses = corpus.attach_frequencies(senses, corpus.read_frequency_table(handle))
    write_jsonl(config.stage_dir / "senses.jsonl", (corpus.sense_to_json(s) for s in senses))
    stats = corpus.split_stats(senses)
    summary = {
        "split": config.split,
        "word_senses": stats.word_senses,
        "unique_words": stats.unique_words,
        "unique_lemmas": stats.unique_lemmas,
        "avg_examples": round(stats.avg_examples, 4),
        "entries": len(entries),
        "malformed_lines": len(diagnostics),
    }
    atomic_write_text(
        config.stage_dir / "corpus_stats.json", json.dumps(summary, indent=2) + "\n"
    )
    return summary


def _stage_generate(config: RunConfig) -> dict:
    senses = _read_senses(config)
    backend = build_chat_backend(config.backends.generator)
    with ThreadPoolExecutor(max_workers=config.backends.generator.concurrency) as pool:
        sets = list(
            pool.map(lambda s: genpipe.generate_candidates(s, config.generation, backend), senses)
        )
    sets.sort(key=lambda cs: cs.word_sense_id)
    write_jsonl(
        config.stage_dir / "candidates.jsonl", (genpipe.candidate_set_to_json(cs) for cs in sets)
    )
    return {
        "senses": len(sets),
        "imputed": sum(1 for cs in sets if cs.imputed),
        "attempts": sum(cs.attempts for cs in sets),
    }


def _candidate_sets(config: RunConfig, senses: list[corpus.WordSense]) -> list[genpipe.CandidateSet]:
    if config.score_source == "examples":
        return [
            genpipe.CandidateSet(
                word_sense_id=s.id,
                candidates=tuple(s.examples),
                attempts=0,
                failures=0,
                imputed=all(e == "" for e in s.examples),
            )
            for s in senses
        ]
    return [
        genpipe.candidate_set_from_json(r)
        for r in read_jsonl(config.stage_dir / "candidates.jsonl")
    ]


def _stage_score(config: RunConfig) -> dict:
    senses = {s.id: s for s in _read_senses(config)}
    cand_sets = _candidate_sets(config, list(senses.values()))
    cand_sets.sort(key=lambda cs: cs.word_sense_id)

    if config.selection == "first_sentence":
        selections = [exemplify.select_first(cs) for cs in cand_sets]
    else:
        mlm = build_mlm_backend(config.backends.mlm)

        def pick(cs: genpipe.CandidateSet) -> exemplify.Selection:
            return exemplify.select_best(cs, senses[cs.word_sense_id].surface_word, mlm)

        with ThreadPoolExecutor(max_workers=config.backends.mlm.concurrency) as pool:
            selections = list(pool.map(pick, cand_sets))

    score_rows = []
    selection_rows = []
    for cs, selection in zip(cand_sets, selections):
        for index, candidate in enumerate(cs.candidates):
            if not candidate:
                continue
            result = selection.results[index] if index < len(selection.results) else None
            score_rows.append(
                {
                    "word_sense_id": cs.word_sense_id,
                    "candidate_index": index,
                    "score": result.score if result else None,
                    "mask_count": result.mask_count if result else 0,
                    "chosen": index == selection.chosen_index,
                }
            )
        selection_rows.append(
            {
                "word_sense_id": selection.word_sense_id,
                "sentence": selection.chosen,
                "candidate_index": selection.chosen_index,
                "fallback": selection.fallback,
            }
        )
    write_jsonl(config.stage_dir / "scores.jsonl", score_rows)
    write_jsonl(config.stage_dir / "selections.jsonl", selection_rows)
    return {
        "senses": len(selections),
        "fallbacks": sum(1 for s in selections if s.fallback and s.chosen),
        "empty": sum(1 for s in selections if not s.chosen),
    }


def _candidate_sentences(config: RunConfig) -> dict[str, str]:
    if config.candidates_file is not None:
        return {
            r["word_sense_id"]: r["sentence"] for r in read_jsonl(config.candidates_file)
        }
    return {
        r["word_sense_id"]: r["sentence"]
        for r in read_jsonl(config.stage_dir / "selections.jsonl")
    }


def _baseline_for(config: RunConfig, sense: corpus.WordSense, baselines: dict[str, str]) -> str | None:
    if config.baseline == "first":
        return corpus.select_baseline(sense)
    if config.baseline == "random":
        return random.Random(f"{config.seed}:baseline:{sense.id}").choice(sense.examples)
    return baselines.get(sense.id)


def _stage_evaluate(config: RunConfig) -> dict:
    senses = {s.id: s for s in _read_senses(config)}
    candidates = _candidate_sentences(config)
    baselines: dict[str, str] = {}
    if config.baseline == "file":
        if config.baseline_file is None:
            raise PipelineError("baseline=file requires baseline_file")
        baselines = {
            r["word_sense_id"]: r["sentence"] for r in read_jsonl(config.baseline_file)
        }
    judge = build_chat_backend(config.backends.judge)

    unknown = sorted(set(candidates) - set(senses))
    if unknown:
        logger.warning("%d candidate ids not in the sense file, skipped", len(unknown))
    pair_ids = sorted(set(candidates) & set(senses))

    def one(item: tuple[int, str]) -> oxfordeval.EvalRecord | None:
        pair_index, sense_id = item
        sense = senses[sense_id]
        baseline = _baseline_for(config, sense, baselines)
        if not baseline:
            logger.warning("sense %s has no baseline sentence, skipped", sense_id)
            return None
        return oxfordeval.evaluate_pair(
            sense,
            candidates[sense_id],
            baseline,
            judge,
            pair_index=pair_index,
            seed=config.seed,
        )

    with ThreadPoolExecutor(max_workers=config.backends.judge.concurrency) as pool:
        records = [r for r in pool.map(one, enumerate(pair_ids)) if r is not None]
    records.sort(key=lambda r: r.word_sense_id)
    write_jsonl(
        config.stage_dir / "eval_records.jsonl", (oxfordeval.record_to_json(r) for r in records)
    )
    summary = oxfordeval.win_rate(records)
    return {
        "pairs": len(records),
        "wins": summary.wins,
        "losses": summary.losses,
        "imputed_losses": summary.imputed_losses,
        "invalids": summary.invalids,
        "win_rate": round(summary.win_rate, 6),
    }


def _stage_report(config: RunConfig) -> dict:
    senses = _read_senses(config)
    records = [
        oxfordeval.record_from_json(r)
        for r in read_jsonl(config.stage_dir / "eval_records.jsonl")
    ]
    win = oxfordeval.win_rate(records)
    cohorts: dict[str, metrics.CohortSummary] = {}
    candidate_sentences = [r.candidate for r in records if r.candidate]
    if candidate_sentences:
        cohorts["candidates"] = metrics.summarize(candidate_sentences)
    cohorts["baselines"] = metrics.summarize([r.baseline for r in records])
    mlm = build_mlm_backend(config.backends.mlm)
    subgroups = metrics.subgroup_split(senses, records, mlm)

    atomic_write_text(
        config.stage_dir / "report.txt", metrics.render_report(win, cohorts, subgroups)
    )
    report_doc = {
        "win_rate": win.win_rate,
        "wins": win.wins,
        "losses": win.losses,
        "imputed_losses": win.imputed_losses,
        "invalids": win.invalids,
        "cohorts": {
            name: {
                "n": c.n,
                "words_avg": c.words_avg,
                "words_sd": c.words_sd,
                "fkgl_avg": c.fkgl_avg,
                "fkgl_sd": c.fkgl_sd,
            }
            for name, c in cohorts.items()
        },
        "subgroups": [
            {
                "key": s.key,
                "n_senses": s.n_senses,
                "win_rate": s.summary.win_rate if s.summary else None,
            }
            for s in subgroups
        ],
    }
    atomic_write_text(
        config.stage_dir / "report.json", json.dumps(report_doc, indent=2) + "\n"
    )

    metric_rows = []
    for record in records:
        for source, sentence in (("candidate", record.candidate), ("baseline", record.baseline)):
            if not sentence:
                continue
            sm = metrics.sentence_metrics(sentence)
            metric_rows.append(
                {
                    "word_sense_id": record.word_sense_id,
                    "source": source,
                    "words": sm.word_count,
                    "syllables": sm.syllable_count,
                    "fkgl": round(sm.fkgl, 6),
                }
            )
    write_jsonl(config.stage_dir / "sentence_metrics.jsonl", metric_rows)
    return {"win_rate": round(win.win_rate, 6), "records": len(records)}


_STAGE_FNS: dict[str, Callable[[RunConfig], dict]] = {
    "preprocess": _stage_preprocess,
    "generate": _stage_generate,
    "score": _stage_score,
    "evaluate": _stage_evaluate,
    "report": _stage_report,
}
