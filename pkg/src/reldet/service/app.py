"""HTTP/JSON operator API wrapping the detector.

Endpoints (all JSON unless noted):
  GET    /frames                       paged frame listing
  GET    /frames/{id}                  image bytes
  POST   /classes                      register a class
  POST   /classes/{id}/supports        add a support box (crops the chip)
  DELETE /classes/{id}/supports/{cid}  drop a support
  POST   /detect                       run detection on a frame
  GET    /status                       checkpoint, classes, parameter hash

Model parameters are never written; GET /status re-hashes them so clients
can verify the no-fine-tuning contract.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles

from ..config import Config
from ..data import prepare_query
from ..model import FewShotDetector
from ..params import load_params
from .schemas import (BoxModel, ClassCreateRequest, ClassInfo, DetectionModel,
                      DetectRequest, DetectResponse, FrameInfo, FramePage,
                      StatusResponse, SupportAddRequest, SupportAddResponse)
from .state import FrameStore, SessionState


def build_app(model: FewShotDetector, cfg: Config, frames_dir,
              checkpoint_id: str = "in-memory",
              static_dir=None) -> FastAPI:
    frames = FrameStore(frames_dir)
    state = SessionState(model, cfg, frames, checkpoint_id,
                         param_hash=model.params().content_hash())
    app = FastAPI(title="reldet operator service")
    app.state.session = state

    @app.exception_handler(RequestValidationError)
    async def _bad_request(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400,
                            content={"detail": str(exc.errors()[:3])})

    @app.get("/frames", response_model=FramePage)
    def list_frames(page: int = 0, page_size: int = 0) -> FramePage:
        size = page_size or cfg.service.page_size
        ids = frames.ids()
        chunk = ids[page * size:(page + 1) * size]
        infos = []
        for fid in chunk:
            w, h = frames.size(fid)
            infos.append(FrameInfo(id=fid, url=f"/frames/{fid}",
                                   width=w, height=h))
        return FramePage(frames=infos, total=len(ids), page=page,
                         page_size=size)

    @app.get("/frames/{frame_id}")
    def get_frame(frame_id: str):
        if frame_id not in frames:
            raise HTTPException(404, f"unknown frame: {frame_id}")
        return FileResponse(frames.path(frame_id))

    @app.post("/classes", response_model=ClassInfo)
    def create_class(req: ClassCreateRequest) -> ClassInfo:
        rc = state.add_class(req.name)
        return ClassInfo(class_id=rc.class_id, name=rc.name, shots=0)

    @app.post("/classes/{class_id}/supports", response_model=SupportAddResponse)
    def add_support(class_id: int, req: SupportAddRequest) -> SupportAddResponse:
        if state.get_class(class_id) is None:
            raise HTTPException(404, f"unknown class: {class_id}")
        if req.frame_id not in frames:
            raise HTTPException(404, f"unknown frame: {req.frame_id}")
        b = req.box
        if not (b.x2 > b.x1 and b.y2 > b.y1):
            raise HTTPException(400, "malformed box: needs x1<x2 and y1<y2")
        try:
            chip_id, shots = state.add_support(class_id, req.frame_id,
                                               b.as_tuple())
        except ValueError as e:
            raise HTTPException(400, str(e)) from e
        return SupportAddResponse(chip_id=chip_id, class_id=class_id,
                                  shots=shots)

    @app.delete("/classes/{class_id}/supports/{chip_id}")
    def remove_support(class_id: int, chip_id: int):
        rc = state.get_class(class_id)
        if rc is None:
            raise HTTPException(404, f"unknown class: {class_id}")
        if chip_id not in rc.chips:
            raise HTTPException(404, f"unknown chip: {chip_id}")
        shots = state.remove_support(class_id, chip_id)
        return {"class_id": class_id, "shots": shots}

    @app.post("/detect", response_model=DetectResponse)
    def detect(req: DetectRequest) -> DetectResponse:
        if req.frame_id not in frames:
            raise HTTPException(404, f"unknown frame: {req.frame_id}")
        try:
            protos, lacking = state.prototypes_for(req.class_ids)
        except KeyError as e:
            raise HTTPException(404, str(e)) from e
        if lacking:
            names = ", ".join(f"{state.class_name(c)} (id {c})"
                              for c in sorted(lacking))
            raise HTTPException(
                409, f"classes without supports: {names}; add supports first")
        if not protos:
            raise HTTPException(409, "no classes registered; add one first")
        raw = frames.load(req.frame_id)
        prepared, scale = prepare_query(raw, cfg.data.query_max_side)
        dets = model.detect_with_prototypes(prepared, protos,
                                            max_dets=cfg.eval.max_dets)
        out = []
        for d in dets:
            box = d.box / scale if scale != 1.0 else d.box
            out.append(DetectionModel(
                box=BoxModel(x1=float(box[0]), y1=float(box[1]),
                             x2=float(box[2]), y2=float(box[3])),
                class_id=d.class_id, class_name=state.class_name(d.class_id),
                score=d.score))
        return DetectResponse(frame_id=req.frame_id, detections=out)

    @app.get("/status", response_model=StatusResponse)
    def status() -> StatusResponse:
        infos = [ClassInfo(class_id=rc.class_id, name=rc.name,
                           shots=len(rc.chips)) for rc in state.classes()]
        return StatusResponse(checkpoint_id=state.checkpoint_id,
                              param_hash=state.param_hash(), classes=infos)

    if static_dir and Path(static_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=str(static_dir), html=True),
                  name="ui")
    return app


def app_from_checkpoint(checkpoint_path, frames_dir,
                        cfg: Config | None = None,
                        static_dir=None) -> FastAPI:
    """Construct the service from a saved checkpoint; the stored config is
    used unless an explicit one is given."""
    from ..config import parse_config
    import yaml

    ps = load_params(checkpoint_path)
    if cfg is None:
        stored = ps.meta.get("config")
        cfg = parse_config(yaml.safe_load(stored)) if stored else Config()
    rng = np.random.default_rng(0)
    model = FewShotDetector(cfg, rng)
    model.load_params(ps)
    return build_app(model, cfg, frames_dir,
                     checkpoint_id=str(Path(checkpoint_path).name),
                     static_dir=static_dir)
