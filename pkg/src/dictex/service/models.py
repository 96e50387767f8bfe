"""Request and response bodies for the HTTP service."""

from __future__ import annotations

from pathlib import Path
from typing import Literal

from pydantic import BaseModel

from ..pipeline import RunConfig


class StageRunRequest(BaseModel):
    config: RunConfig
    force: bool = False


class StageRunResponse(BaseModel):
    stage: str
    status: Literal["completed", "skipped"]
    artifacts: list[str]
    summary: dict


class SessionCreateRequest(BaseModel):
    seed: int
    senses_file: Path | None = None
    selections_file: Path | None = None
    sample_size: int | None = None
    pair_ids: list[str] | None = None
    session_id: str | None = None


class SessionInfo(BaseModel):
    session_id: str
    pairs: int


class PairPayload(BaseModel):
    # Deliberately no flip flag and no source attribution: annotators are blind.
    pair_id: str
    word: str
    pos: str
    definition: str
    output_a: str
    output_b: str
    index: int
    total: int


class NextPairResponse(BaseModel):
    done: bool
    pair: PairPayload | None = None


class LabelRequest(BaseModel):
    pair_id: str
    annotator_id: str
    choice: Literal["a", "b"]


class LabelResponse(BaseModel):
    pair_id: str
    annotator_id: str
    choice: str
    duplicate: bool


class ProgressResponse(BaseModel):
    total: int
    by_annotator: dict[str, int]


class HumanLabel(BaseModel):
    pair_id: str
    label: int


class ExportResponse(BaseModel):
    kept: list[HumanLabel]
    agreement: float
    fully_annotated: int
    under_annotated: int
