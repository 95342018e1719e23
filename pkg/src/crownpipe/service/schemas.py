"""Request/response bodies of the labeling service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class GridInfo(BaseModel):
    width: int
    height: int
    origin_x: float
    origin_y: float
    pixel_size: float


class ClassInfo(BaseModel):
    id: int
    name: str
    color: str


class ProjectInfo(BaseModel):
    grid: GridInfo
    segment_count: int
    labeled: dict[str, int]  # provenance -> record count
    classes: list[ClassInfo]


class LabelIn(BaseModel):
    segment: int
    class_id: int = Field(alias="class")

    model_config = {"populate_by_name": True}


class LabelOut(BaseModel):
    segment: int
    class_id: int = Field(serialization_alias="class")
    provenance: str


class SegmentInfo(BaseModel):
    id: int
    n: int
    perimeter: int
    bbox: tuple[int, int, int, int]
    mean: list[float]
    std: list[float]
    label: LabelOut | None = None


class MergeIn(BaseModel):
    ids: list[int]


class MergeOut(BaseModel):
    merged_into: int
    removed: list[int]
    segment_count: int


class NNRunOut(BaseModel):
    predicted: int
    per_class: dict[int, int]


class ExportOut(BaseModel):
    ground_truth: str
    legend: str
    manifest: str
    per_class_counts: dict[int, int]
