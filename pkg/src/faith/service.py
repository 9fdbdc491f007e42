"""HTTP service for the interactive workflow.

One service instance wraps one loaded volume.  Browsing endpoints serve
windowed 8-bit PNG slices (plus exact raw bytes); seed management, training,
slice previews, and asynchronous full-volume segmentation jobs live under
``/api/v1``.  Editing seeds marks any trained model stale until retrained.

Preview overlays are RGBA PNGs encoding, per voxel:
  both model and global threshold segment it  -> OVERLAY_BOTH
  only the model segments it (the adaptation) -> OVERLAY_FAITH_ONLY
  only the global threshold segments it       -> OVERLAY_GLOBAL_ONLY
  neither                                     -> transparent
"""
from __future__ import annotations

import io
import json
import threading
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from PIL import Image
from pydantic import BaseModel

from .errors import BorderSeedError
from .features import DEFAULT_FEATURES, FeatureConfig
from .segmenter import SeedSet, SegmentationJob, decide_slice, train_from_seeds
from .solver import FaithModel
from .tuning import CVReport, HyperGrid
from .volume import Volume, is_complete, load_volume

OVERLAY_BOTH = (255, 255, 255, 160)
OVERLAY_FAITH_ONLY = (255, 128, 0, 220)
OVERLAY_GLOBAL_ONLY = (64, 128, 255, 220)

_AXES = ("x", "y", "z")


class SeedBody(BaseModel):
    position: tuple[int, int, int] | None = None
    positions: list[tuple[int, int, int]] | None = None


class TrainBody(BaseModel):
    theta_g: float
    K: int | None = None
    features: list[str] | None = None
    k_max: int | None = None
    eps_path: float | None = None
    folds: int | None = None
    fold_seed: int = 0


class PreviewBody(BaseModel):
    axis: str
    index: int


class SegmentBody(BaseModel):
    out_path: str
    slab: int | None = None
    workers: int | None = None


class Session:
    """Mutable per-volume state: seeds, the current model, and jobs."""

    def __init__(self, volume: Volume, env_size: int = 7, path: str | None = None):
        self.volume = volume
        self.env_size = int(env_size)
        self.seeds: list[tuple[int, int, int]] = []
        self.theta_g: float | None = None
        self.model: FaithModel | None = None
        self.cv_report: CVReport | None = None
        self.stale = True
        self.jobs: dict[str, SegmentationJob] = {}
        self.lock = threading.RLock()
        self.path = path

    def to_dict(self) -> dict:
        return {
            "env_size": self.env_size,
            "theta_g": self.theta_g,
            "seeds": [list(p) for p in self.seeds],
            "stale": self.stale,
            "model": self.model.to_dict() if self.model else None,
            "cv_report": self.cv_report.to_dict() if self.cv_report else None,
        }

    def restore(self, d: dict) -> None:
        self.env_size = int(d.get("env_size", self.env_size))
        self.theta_g = d.get("theta_g")
        self.seeds = [tuple(p) for p in d.get("seeds", [])]
        self.stale = bool(d.get("stale", True))
        self.model = FaithModel.from_dict(d["model"]) if d.get("model") else None
        self.cv_report = CVReport.from_dict(d["cv_report"]) if d.get("cv_report") else None

    def persist(self) -> None:
        if self.path:
            Path(self.path).write_text(json.dumps(self.to_dict()) + "\n")


def _png_response(array: np.ndarray, mode: str) -> Response:
    img = Image.fromarray(array, mode=mode)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return Response(content=buf.getvalue(), media_type="image/png")


def _check_axis_index(session: Session, axis: str, index: int) -> None:
    if axis not in _AXES:
        raise HTTPException(400, f"axis must be one of {_AXES}, got {axis!r}")
    sizes = dict(zip(_AXES, session.volume.meta.dims))
    if not 0 <= index < sizes[axis]:
        raise HTTPException(400, f"slice index {index} out of range for axis {axis}")


def _window_to_uint8(arr: np.ndarray, lo: float, hi: float) -> np.ndarray:
    scaled = (arr.astype(np.float64) - lo) * (255.0 / (hi - lo))
    return np.clip(np.rint(scaled), 0, 255).astype(np.uint8)


def render_overlay(faith_mask: np.ndarray, global_mask: np.ndarray) -> np.ndarray:
    """RGBA overlay distinguishing model-only, global-only, and joint voxels."""
    out = np.zeros(faith_mask.shape + (4,), dtype=np.uint8)
    f = faith_mask.astype(bool)
    g = global_mask.astype(bool)
    out[f & g] = OVERLAY_BOTH
    out[f & ~g] = OVERLAY_FAITH_ONLY
    out[~f & g] = OVERLAY_GLOBAL_ONLY
    return out


def create_app(
    volume_path,
    env_size: int = 7,
    session_path: str | None = None,
    ui_dir: str | None = None,
) -> FastAPI:
    volume = load_volume(volume_path)
    session = Session(volume, env_size=env_size, path=session_path)
    if session_path and Path(session_path).exists():
        session.restore(json.loads(Path(session_path).read_text()))

    app = FastAPI(title="faith service")
    app.state.session = session

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        # malformed positions/parameters are client errors, not border rejections
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")
    meta = volume.meta
    prefix = "/api/v1"

    @app.get(prefix + "/volume/meta")
    def volume_meta():
        return {
            "dims": list(meta.dims),
            "dtype": meta.dtype,
            "voxel_count": meta.voxel_count,
            "max_value": meta.max_value,
            "env_size": session.env_size,
        }

    @app.get(prefix + "/slice/{axis}/{index}")
    def get_slice(axis: str, index: int, lo: float = 0.0, hi: float | None = None):
        _check_axis_index(session, axis, index)
        hi = meta.max_value if hi is None else hi
        if hi <= lo:
            raise HTTPException(400, f"invalid window [{lo}, {hi}]")
        data = session.volume.get_slice(axis, index)
        return _png_response(_window_to_uint8(data, lo, hi), "L")

    @app.get(prefix + "/slice/{axis}/{index}/raw")
    def get_slice_raw(axis: str, index: int):
        _check_axis_index(session, axis, index)
        data = np.ascontiguousarray(session.volume.get_slice(axis, index))
        return Response(
            content=data.tobytes(),
            media_type="application/octet-stream",
            headers={
                "X-Shape": json.dumps(list(data.shape)),
                "X-Dtype": meta.dtype,
            },
        )

    @app.get(prefix + "/seeds")
    def get_seeds():
        with session.lock:
            return {
                "positions": [list(p) for p in session.seeds],
                "env_size": session.env_size,
                "count": len(session.seeds),
            }

    @app.post(prefix + "/seeds")
    def post_seeds(body: SeedBody):
        new = []
        if body.position is not None:
            new.append(tuple(body.position))
        if body.positions:
            new.extend(tuple(p) for p in body.positions)
        if not new:
            raise HTTPException(400, "no position given")
        dims = meta.dims
        for p in new:
            if any(c < 0 or c >= d for c, d in zip(p, dims)):
                raise HTTPException(400, f"position {list(p)} out of bounds for dims {list(dims)}")
        with session.lock:
            borders = [p for p in new if not is_complete(dims, p, session.env_size)]
            if borders:
                raise HTTPException(
                    422,
                    {
                        "message": f"seed(s) too close to the border for K={session.env_size}",
                        "positions": [list(p) for p in borders],
                    },
                )
            added = [p for p in new if p not in session.seeds]
            session.seeds.extend(added)
            session.stale = True
            session.persist()
            return {
                "positions": [list(p) for p in session.seeds],
                "added": [list(p) for p in added],
                "count": len(session.seeds),
            }

    @app.delete(prefix + "/seeds")
    def delete_seeds(body: SeedBody | None = None):
        with session.lock:
            if body is None or (body.position is None and not body.positions):
                removed = len(session.seeds)
                session.seeds.clear()
            else:
                targets = []
                if body.position is not None:
                    targets.append(tuple(body.position))
                if body.positions:
                    targets.extend(tuple(p) for p in body.positions)
                missing = [t for t in targets if t not in session.seeds]
                if missing:
                    raise HTTPException(404, f"seed(s) not present: {[list(p) for p in missing]}")
                for t in targets:
                    session.seeds.remove(t)
                removed = len(targets)
            session.stale = True
            session.persist()
            return {
                "positions": [list(p) for p in session.seeds],
                "removed": removed,
                "count": len(session.seeds),
            }

    @app.post(prefix + "/train")
    def train(body: TrainBody):
        with session.lock:
            if not session.seeds:
                raise HTTPException(409, "cannot train with zero seeds")
            k = int(body.K) if body.K is not None else session.env_size
            features = tuple(body.features) if body.features else DEFAULT_FEATURES
            try:
                cfg = FeatureConfig(features, k, meta.max_value)
                seeds = SeedSet(list(session.seeds), env_size=k)
                grid_kwargs = {}
                if body.k_max is not None:
                    grid_kwargs["k_max"] = int(body.k_max)
                if body.eps_path is not None:
                    grid_kwargs["eps_path"] = float(body.eps_path)
                grid = HyperGrid(**grid_kwargs) if grid_kwargs else None
                model, report = train_from_seeds(
                    session.volume,
                    seeds,
                    cfg,
                    body.theta_g,
                    grid=grid,
                    folds=body.folds,
                    fold_seed=body.fold_seed,
                )
            except BorderSeedError as exc:
                raise HTTPException(
                    422,
                    {"message": str(exc), "positions": [list(p) for p in exc.positions]},
                ) from exc
            except ValueError as exc:
                raise HTTPException(400, str(exc)) from exc
            session.model = model
            session.cv_report = report
            session.theta_g = float(body.theta_g)
            session.env_size = k
            session.stale = False
            session.persist()
            return {"model": model.to_dict(), "cv_report": report.to_dict()}

    @app.get(prefix + "/model")
    def get_model():
        with session.lock:
            if session.model is None or session.stale:
                raise HTTPException(404, "no trained model (absent or stale)")
            return session.model.to_dict()

    @app.post(prefix + "/preview")
    def preview(body: PreviewBody):
        with session.lock:
            if session.model is None or session.stale:
                raise HTTPException(409, "no current model; train first")
            model = session.model
        _check_axis_index(session, body.axis, body.index)
        faith_mask, global_mask = decide_slice(session.volume, model, body.axis, body.index)
        return _png_response(render_overlay(faith_mask, global_mask), "RGBA")

    @app.post(prefix + "/segment")
    def start_segment(body: SegmentBody):
        with session.lock:
            if session.model is None or session.stale:
                raise HTTPException(409, "no current model; train first")
            job = SegmentationJob(
                session.volume,
                session.model,
                body.out_path,
                slab_thickness=body.slab or 16,
                workers=body.workers or 1,
            )
            session.jobs[job.id] = job
        thread = threading.Thread(target=job.run, daemon=True)
        thread.start()
        return {"job_id": job.id}

    @app.get(prefix + "/jobs/{job_id}")
    def job_status(job_id: str):
        job = session.jobs.get(job_id)
        if job is None:
            raise HTTPException(404, f"unknown job {job_id}")
        return job.to_dict()

    @app.delete(prefix + "/jobs/{job_id}")
    def job_cancel(job_id: str):
        job = session.jobs.get(job_id)
        if job is None:
            raise HTTPException(404, f"unknown job {job_id}")
        job.cancel()
        return job.to_dict()

    return app
