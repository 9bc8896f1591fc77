"""Scene and edit descriptors, on-disk layout, and the bundled demo scene.

A scene descriptor names the field checkpoint, world bounds, default
camera and render settings. An edit descriptor pins the ROI box, blend
mode, caption, frozen density center and the trained generator checkpoint.
Both are JSON files; relative paths resolve against the descriptor's
directory.
"""

from __future__ import annotations

import importlib.resources
import json
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import fields
from .blending import BlendMode
from .geometry import CameraPose, RoiBox, look_at
from .renderer import RenderSettings

SCENE_TYPES = ("full-orbit", "forward-facing")


def pose_from_dict(d: dict) -> CameraPose:
    return CameraPose.from_dict(d)


@dataclass
class SceneDescriptor:
    scene_id: str
    scene_type: str
    field_path: Path
    bounds_min: np.ndarray
    bounds_max: np.ndarray
    default_pose: dict
    near: float
    far: float
    n_samples: int = 64
    resolution: int = 168

    def __post_init__(self):
        if self.scene_type not in SCENE_TYPES:
            raise ValueError(f"unknown scene_type {self.scene_type!r}")
        self.bounds_min = np.asarray(self.bounds_min, dtype=np.float64)
        self.bounds_max = np.asarray(self.bounds_max, dtype=np.float64)
        if not np.all(self.bounds_min < self.bounds_max):
            raise ValueError("scene bounds must be nonempty")
        if not Path(self.field_path).exists():
            raise FileNotFoundError(f"field checkpoint not found: {self.field_path}")

    def load_field(self):
        field, _ = fields.load_checkpoint(self.field_path)
        return field

    def pose(self) -> CameraPose:
        return pose_from_dict(self.default_pose)

    @property
    def afov(self) -> float:
        return math.radians(float(self.default_pose["afov_deg"]))

    def render_settings(self, stratified: bool = False) -> RenderSettings:
        return RenderSettings(
            near=self.near, far=self.far, n_samples=self.n_samples,
            stratified=stratified,
        )

    def contains_box(self, box: RoiBox) -> bool:
        return bool(
            np.all(box.min_corner >= self.bounds_min)
            and np.all(box.max_corner <= self.bounds_max)
        )

    def to_dict(self) -> dict:
        return {
            "id": self.scene_id,
            "scene_type": self.scene_type,
            "field": str(self.field_path),
            "bounds": {
                "min": self.bounds_min.tolist(),
                "max": self.bounds_max.tolist(),
            },
            "default_pose": self.default_pose,
            "render": {
                "near": self.near,
                "far": self.far,
                "n_samples": self.n_samples,
                "resolution": self.resolution,
            },
        }


def load_scene(path) -> SceneDescriptor:
    """Read a scene descriptor; "demo" resolves to the bundled test scene."""
    path = _resolve_scene_path(path)
    doc = json.loads(path.read_text())
    render = doc.get("render", {})
    field_path = Path(doc["field"])
    if not field_path.is_absolute():
        field_path = path.parent / field_path
    return SceneDescriptor(
        scene_id=doc["id"],
        scene_type=doc.get("scene_type", "full-orbit"),
        field_path=field_path,
        bounds_min=doc["bounds"]["min"],
        bounds_max=doc["bounds"]["max"],
        default_pose=doc["default_pose"],
        near=float(render.get("near", 0.1)),
        far=float(render.get("far", 10.0)),
        n_samples=int(render.get("n_samples", 64)),
        resolution=int(render.get("resolution", 168)),
    )


def _resolve_scene_path(path) -> Path:
    p = Path(path)
    if p.exists():
        return p
    if str(path) == "demo":
        return bundled_scene_path()
    raise FileNotFoundError(f"scene descriptor not found: {path}")


def bundled_scene_path() -> Path:
    return Path(importlib.resources.files("roifield").joinpath("data/demo_scene.json"))


@dataclass
class EditDescriptor:
    scene_id: str
    box: RoiBox
    mode: BlendMode
    caption: str
    ema_center: np.ndarray | None = None
    field_g_path: Path | None = None
    texture_only: bool = False

    def __post_init__(self):
        if self.ema_center is not None:
            self.ema_center = np.asarray(self.ema_center, dtype=np.float64)
            if not self.box.contains(self.ema_center):
                raise ValueError("ema_center must lie inside the ROI box")
        if not self.caption:
            raise ValueError("caption must be nonempty")

    def center(self) -> np.ndarray:
        return self.ema_center if self.ema_center is not None else self.box.center

    def load_field(self):
        if self.field_g_path is None:
            raise ValueError("edit has no trained generator checkpoint yet")
        field, _ = fields.load_checkpoint(self.field_g_path)
        return field

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "box": self.box.to_dict(),
            "mode": self.mode.to_dict(),
            "caption": self.caption,
            "ema_center": None if self.ema_center is None else self.ema_center.tolist(),
            "field_g_checkpoint": None if self.field_g_path is None else str(self.field_g_path),
            "texture_only": self.texture_only,
        }


def load_edit(path) -> EditDescriptor:
    path = Path(path)
    doc = json.loads(path.read_text())
    return edit_from_dict(doc, base_dir=path.parent)


def edit_from_dict(doc: dict, base_dir: Path | None = None) -> EditDescriptor:
    ckpt = doc.get("field_g_checkpoint")
    field_g_path = None
    if ckpt:
        field_g_path = Path(ckpt)
        if base_dir is not None and not field_g_path.is_absolute():
            field_g_path = base_dir / field_g_path
    return EditDescriptor(
        scene_id=doc["scene_id"],
        box=RoiBox.from_dict(doc["box"]),
        mode=BlendMode.from_dict(doc.get("mode", {"variant": "replace"})),
        caption=doc["caption"],
        ema_center=doc.get("ema_center"),
        field_g_path=field_g_path,
        texture_only=bool(doc.get("texture_only", False)),
    )


def validate_edit(scene: SceneDescriptor, edit: EditDescriptor):
    if edit.scene_id != scene.scene_id:
        raise ValueError(
            f"edit targets scene {edit.scene_id!r}, descriptor is {scene.scene_id!r}"
        )
    if not scene.contains_box(edit.box):
        raise ValueError("ROI box must lie within the scene bounds")


def save_edit(edit: EditDescriptor, path):
    Path(path).write_text(json.dumps(edit.to_dict(), indent=2))
