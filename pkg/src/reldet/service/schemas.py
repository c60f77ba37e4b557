"""Request/response bodies for the operator API.

Boxes travel as {x1,y1,x2,y2} in image-pixel coordinates; scores lie in
[0,1]. These models define the wire contract the browser console consumes.
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class BoxModel(BaseModel):
    x1: float
    y1: float
    x2: float
    y2: float

    def as_tuple(self):
        return (self.x1, self.y1, self.x2, self.y2)


class FrameInfo(BaseModel):
    id: str
    url: str
    width: int
    height: int


class FramePage(BaseModel):
    frames: list[FrameInfo]
    total: int
    page: int
    page_size: int


class ClassCreateRequest(BaseModel):
    name: str = Field(min_length=1, max_length=64)


class ClassInfo(BaseModel):
    class_id: int
    name: str
    shots: int


class SupportAddRequest(BaseModel):
    frame_id: str
    box: BoxModel


class SupportAddResponse(BaseModel):
    chip_id: int
    class_id: int
    shots: int


class DetectRequest(BaseModel):
    frame_id: str
    class_ids: list[int] | None = None


class DetectionModel(BaseModel):
    box: BoxModel
    class_id: int
    class_name: str
    score: float


class DetectResponse(BaseModel):
    frame_id: str
    detections: list[DetectionModel]


class StatusResponse(BaseModel):
    checkpoint_id: str
    param_hash: str
    classes: list[ClassInfo]


class ErrorBody(BaseModel):
    detail: str
