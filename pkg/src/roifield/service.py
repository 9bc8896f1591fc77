"""HTTP service for the ROI editor and batch tools.

Wraps the core engine: scene listing, view rendering with a depth sidecar,
box-edge projection for the overlay, and training jobs with polled status.
Render requests are read-only and served concurrently; each edit id runs at
most one training job at a time, and mid-training renders work on a
snapshot of the generator parameters.
"""

from __future__ import annotations

import base64
import copy
import json
import tempfile
import threading
import uuid
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
import torch
from fastapi import FastAPI, HTTPException, Query
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from . import blending, geometry, imageio, renderer, scenes, trainer
from .blending import BlendMode
from .geometry import CameraPose, RoiBox
from .guidance import MockScorer, default_mock_target
from .renderer import RenderSettings

MAX_RENDER_PIXELS = 512 * 512


class PoseModel(BaseModel):
    position: list[float] = Field(min_length=3, max_length=3)
    look_at: list[float] = Field(min_length=3, max_length=3)
    up: list[float] | None = None
    afov_deg: float = 60.0

    def to_pose(self) -> CameraPose:
        try:
            return CameraPose.from_dict(self.model_dump())
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=f"invalid pose: {exc}")


class BoxModel(BaseModel):
    center: list[float] = Field(min_length=3, max_length=3)
    dims: list[float] = Field(min_length=3, max_length=3)

    def to_box(self) -> RoiBox:
        try:
            return RoiBox(center=self.center, dims=self.dims)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=f"invalid box: {exc}")


class BlendModeModel(BaseModel):
    variant: str = "replace"
    alpha: float = 1.0
    eps: float = 1e-9

    def to_mode(self) -> BlendMode:
        try:
            return BlendMode(variant=self.variant, alpha=self.alpha, eps=self.eps)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=f"invalid blend mode: {exc}")


class SceneSummary(BaseModel):
    id: str
    scene_type: str
    bounds_min: list[float]
    bounds_max: list[float]
    default_pose: PoseModel
    resolution: int


class RenderResponse(BaseModel):
    width: int
    height: int
    png_base64: str
    depth_f32_base64: str
    mean_transmittance: float


class RoiRequest(BaseModel):
    scene: str
    pose: PoseModel
    box: BoxModel
    resolution: int | None = None
    samples_per_edge: int = 24


class EdgeSampleModel(BaseModel):
    edge: int
    pixel: list[float]
    visible: bool


class RoiResponse(BaseModel):
    width: int
    height: int
    samples: list[EdgeSampleModel]


class EditCreateRequest(BaseModel):
    scene: str
    box: BoxModel
    mode: BlendModeModel = BlendModeModel()
    caption: str
    texture_only: bool = False
    steps: int = 200
    seed: int = 123
    render_resolution: int = 32
    n_samples: int = 32
    scorer: str = "mock"
    mock_target_png_base64: str | None = None
    edit_id: str | None = None


class EditCreateResponse(BaseModel):
    id: str


class EditStatusResponse(BaseModel):
    id: str
    state: str
    step: int
    total_steps: int
    losses: dict | None = None
    error: str | None = None


@dataclass
class TrainingJob:
    edit_id: str
    scene_id: str
    box: RoiBox
    mode: BlendMode
    caption: str
    total_steps: int
    out_dir: Path
    lock: threading.Lock = dc_field(default_factory=threading.Lock)
    state: str = "running"
    step: int = 0
    losses: dict | None = None
    error: str | None = None
    field_snapshot: object = None
    center: np.ndarray | None = None
    thread: threading.Thread | None = None

    def status(self) -> dict:
        with self.lock:
            return {
                "id": self.edit_id,
                "state": self.state,
                "step": self.step,
                "total_steps": self.total_steps,
                "losses": self.losses,
                "error": self.error,
            }


def _decode_png(b64: str) -> np.ndarray:
    import io

    from PIL import Image

    raw = base64.b64decode(b64)
    img = Image.open(io.BytesIO(raw)).convert("RGB")
    return np.asarray(img, dtype=np.float64) / 255.0


def create_app(scenes_dir=None, jobs_dir=None, frontend_dir=None) -> FastAPI:
    """Build the service. `scenes_dir` holds scene descriptor JSON files;
    the bundled demo scene is always available. A built frontend directory,
    when present, is served under /ui."""
    app = FastAPI(title="roifield scene service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    if frontend_dir is None and Path("frontend/dist").is_dir():
        frontend_dir = Path("frontend/dist")
    if frontend_dir is not None and Path(frontend_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=frontend_dir, html=True), name="ui")
    jobs_root = Path(jobs_dir) if jobs_dir else Path(tempfile.mkdtemp(prefix="roifield-jobs-"))
    jobs_root.mkdir(parents=True, exist_ok=True)

    registry: dict[str, scenes.SceneDescriptor] = {}
    fields_cache: dict[str, object] = {}
    jobs: dict[str, TrainingJob] = {}
    jobs_lock = threading.Lock()

    def _load_registry():
        demo = scenes.load_scene("demo")
        registry[demo.scene_id] = demo
        if scenes_dir is not None:
            for path in sorted(Path(scenes_dir).glob("*.json")):
                try:
                    desc = scenes.load_scene(path)
                except (ValueError, KeyError, FileNotFoundError):
                    continue
                registry[desc.scene_id] = desc

    _load_registry()

    def _scene(scene_id: str) -> scenes.SceneDescriptor:
        if scene_id not in registry:
            raise HTTPException(status_code=404, detail=f"unknown scene {scene_id!r}")
        return registry[scene_id]

    def _field(scene_id: str):
        if scene_id not in fields_cache:
            fields_cache[scene_id] = _scene(scene_id).load_field()
        return fields_cache[scene_id]

    def _resolution(scene: scenes.SceneDescriptor, res: int | None) -> int:
        r = scene.resolution if res is None else int(res)
        if r < 1 or r * r > MAX_RENDER_PIXELS:
            raise HTTPException(status_code=400, detail=f"resolution {r} out of range")
        return r

    def _parse_pose(scene: scenes.SceneDescriptor, pose_json: str | None) -> CameraPose:
        if pose_json is None:
            return scene.pose()
        try:
            return PoseModel(**json.loads(pose_json)).to_pose()
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=f"invalid pose: {exc}")

    def _render_response(output, res: int) -> RenderResponse:
        return RenderResponse(
            width=res,
            height=res,
            png_base64=imageio.b64_png(output.rgb_array()),
            depth_f32_base64=imageio.b64_f32(output.depth.detach().numpy()),
            mean_transmittance=float(output.mean_transmittance),
        )

    @app.get("/scenes", response_model=list[SceneSummary])
    def list_scenes():
        return [
            SceneSummary(
                id=s.scene_id,
                scene_type=s.scene_type,
                bounds_min=s.bounds_min.tolist(),
                bounds_max=s.bounds_max.tolist(),
                default_pose=PoseModel(**s.default_pose),
                resolution=s.resolution,
            )
            for s in registry.values()
        ]

    @app.get("/render", response_model=RenderResponse)
    def render_scene(
        scene: str,
        pose: str | None = Query(default=None, description="JSON pose"),
        res: int | None = None,
    ):
        desc = _scene(scene)
        resolution = _resolution(desc, res)
        camera = _parse_pose(desc, pose)
        with torch.no_grad():
            output = renderer.render_view(
                _field(scene), camera, resolution, desc.render_settings()
            )
        return _render_response(output, resolution)

    @app.post("/roi", response_model=RoiResponse)
    def project_roi(req: RoiRequest):
        desc = _scene(req.scene)
        resolution = _resolution(desc, req.resolution)
        camera = req.pose.to_pose()
        box = req.box.to_box()
        if req.samples_per_edge < 2:
            raise HTTPException(status_code=400, detail="samples_per_edge must be >= 2")
        with torch.no_grad():
            output = renderer.render_view(
                _field(req.scene), camera, resolution, desc.render_settings()
            )
        depth = renderer.occlusion_depth(output, desc.far)
        samples = geometry.project_box_edges(box, camera, depth, req.samples_per_edge)
        return RoiResponse(
            width=resolution,
            height=resolution,
            samples=[
                EdgeSampleModel(edge=s.edge, pixel=s.pixel.tolist(), visible=s.visible)
                for s in samples
            ],
        )

    def _run_job(job: TrainingJob, req: EditCreateRequest, scene: scenes.SceneDescriptor):
        try:
            field_o = scene.load_field()
            if req.mock_target_png_base64:
                target = _decode_png(req.mock_target_png_base64)
            else:
                target = default_mock_target(req.caption, req.render_resolution)
            scorer = MockScorer(input_resolution=max(req.render_resolution, 32))
            scorer.register(req.caption, target)
            cfg = trainer.TrainConfig(
                steps=req.steps,
                seed=req.seed,
                afov_deg=float(scene.default_pose.get("afov_deg", 60.0)),
                render_resolution=req.render_resolution,
                n_samples=req.n_samples,
                mode=job.mode,
                freeze_density=req.texture_only,
            )

            def progress(state):
                with job.lock:
                    job.step = state.step
                    job.losses = state.loss_history[-1] if state.loss_history else None
                    job.field_snapshot = copy.deepcopy(state.field_g)
                    job.center = state.tracker.center_or(job.box.center).copy()

            result = trainer.train(
                field_o, job.box, req.caption, cfg, scorer, job.out_dir,
                scene_id=scene.scene_id, progress=progress,
            )
            with job.lock:
                job.state = "done"
                job.center = np.asarray(result.descriptor["ema_center"])
        except Exception as exc:  # surfaced via /status
            with job.lock:
                job.state = "error"
                job.error = str(exc)

    @app.post("/edits", response_model=EditCreateResponse)
    def create_edit(req: EditCreateRequest):
        desc = _scene(req.scene)
        box = req.box.to_box()
        if not desc.contains_box(box):
            raise HTTPException(status_code=400, detail="ROI box outside scene bounds")
        if not req.caption:
            raise HTTPException(status_code=400, detail="caption must be nonempty")
        if req.scorer != "mock":
            raise HTTPException(status_code=400, detail="service jobs support the mock scorer only")
        edit_id = req.edit_id or uuid.uuid4().hex
        mode = req.mode.to_mode()
        with jobs_lock:
            existing = jobs.get(edit_id)
            if existing is not None and existing.status()["state"] == "running":
                raise HTTPException(status_code=409, detail=f"edit {edit_id!r} already training")
            job = TrainingJob(
                edit_id=edit_id,
                scene_id=desc.scene_id,
                box=box,
                mode=mode,
                caption=req.caption,
                total_steps=req.steps,
                out_dir=jobs_root / edit_id,
            )
            jobs[edit_id] = job
        thread = threading.Thread(target=_run_job, args=(job, req, desc), daemon=True)
        job.thread = thread
        thread.start()
        return EditCreateResponse(id=edit_id)

    def _job(edit_id: str) -> TrainingJob:
        with jobs_lock:
            if edit_id not in jobs:
                raise HTTPException(status_code=404, detail=f"unknown edit {edit_id!r}")
            return jobs[edit_id]

    @app.get("/edits/{edit_id}/status", response_model=EditStatusResponse)
    def edit_status(edit_id: str):
        return EditStatusResponse(**_job(edit_id).status())

    @app.get("/edits/{edit_id}/render", response_model=RenderResponse)
    def edit_render(
        edit_id: str,
        pose: str | None = Query(default=None),
        res: int | None = None,
    ):
        job = _job(edit_id)
        desc = _scene(job.scene_id)
        resolution = _resolution(desc, res)
        camera = _parse_pose(desc, pose)
        with job.lock:
            snapshot = job.field_snapshot
            center = job.center
            state = job.state
        if snapshot is None:
            if state == "error":
                raise HTTPException(status_code=409, detail=f"edit failed: {job.error}")
            raise HTTPException(status_code=409, detail="no generator snapshot yet")
        with torch.no_grad():
            output = blending.render_blended(
                _field(job.scene_id), snapshot, job.box, job.mode, camera,
                resolution, desc.render_settings(),
                center=center,
            )
        return _render_response(output, resolution)

    return app
