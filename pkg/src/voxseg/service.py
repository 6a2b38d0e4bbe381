"""HTTP inference service consumed by the browser studio.

Read-only endpoints are freely concurrent; segmentation requests serialize
through a single lock so at most one sampling pass runs per bundle.
"""

from __future__ import annotations

import threading
from pathlib import Path
from typing import Literal

from fastapi import FastAPI, HTTPException
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .shapes import DatasetEntry
from .training import ModelBundle, run_segmentation

Click = tuple[int, int, int]


class ShapeSummary(BaseModel):
    id: str
    num_parts: int
    resolution: int


class ShapeDetail(BaseModel):
    id: str
    resolution: int
    num_parts: int
    coords: list[Click]
    gt_labels: list[int]


class SegmentRequest(BaseModel):
    shape_id: str
    task: Literal["interactive", "full", "guided"]
    clicks: list[Click] = Field(default_factory=list, max_length=10)
    steps: int = Field(default=12, ge=1, le=500)
    seed: int = 0
    palette_seed: int | None = None


class SegmentResponse(BaseModel):
    colors: list[tuple[float, float, float]]
    labels: list[int]
    iou_vs_gt: float | None = None
    elapsed_ms: float


def create_app(
    bundle: ModelBundle, entries: list[DatasetEntry], studio_dir=None
) -> FastAPI:
    by_id = {e.shape_id: e for e in entries}
    inference_lock = threading.Lock()
    app = FastAPI(title="voxseg inference service")

    def lookup(shape_id: str) -> DatasetEntry:
        entry = by_id.get(shape_id)
        if entry is None:
            raise HTTPException(status_code=409, detail=f"unknown shape id {shape_id!r}")
        return entry

    @app.get("/api/shapes", response_model=list[ShapeSummary])
    def list_shapes():
        return [
            ShapeSummary(
                id=e.shape_id,
                num_parts=e.labeling.num_parts,
                resolution=e.grid.resolution,
            )
            for e in entries
        ]

    @app.get("/api/shape/{shape_id}", response_model=ShapeDetail)
    def shape_detail(shape_id: str):
        e = lookup(shape_id)
        return ShapeDetail(
            id=e.shape_id,
            resolution=e.grid.resolution,
            num_parts=e.labeling.num_parts,
            coords=[tuple(c) for c in e.grid.coords.tolist()],
            gt_labels=e.labeling.labels.tolist(),
        )

    @app.post("/api/segment", response_model=SegmentResponse)
    def segment(req: SegmentRequest):
        entry = lookup(req.shape_id)
        clicks = req.clicks if req.task == "interactive" else []
        with inference_lock:
            try:
                result = run_segmentation(
                    bundle,
                    entry.grid,
                    entry.labeling,
                    req.task,
                    clicks,
                    steps=req.steps,
                    seed=req.seed,
                    palette_seed=req.palette_seed,
                )
            except ValueError as exc:
                raise HTTPException(status_code=422, detail=str(exc)) from None
        return SegmentResponse(
            colors=[tuple(c) for c in result["colors"].tolist()],
            labels=result["labels"].tolist(),
            iou_vs_gt=result["iou_vs_gt"],
            elapsed_ms=result["elapsed_ms"],
        )

    if studio_dir is not None and Path(studio_dir).is_dir():
        app.mount("/studio", StaticFiles(directory=studio_dir, html=True), name="studio")

    return app
