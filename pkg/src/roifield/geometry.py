"""Ray, camera and ROI-box geometry.

Everything in this module is pure float64 numpy: rays, axis-aligned boxes,
orthonormal camera frames, slab intersection, training-pose sampling and
projection of box edges onto the image plane with depth occlusion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

WORLD_UP = np.array([0.0, 0.0, 1.0])

# Relative tolerance on scene depth when testing box-edge occlusion,
# avoids z-fighting for edges lying exactly on a rendered surface.
OCCLUSION_DEPTH_RTOL = 1e-3


def _as_vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64)
    if a.shape != (3,):
        raise ValueError(f"expected 3-vector, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite 3-vector")
    return a


def normalize(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ValueError("cannot normalize zero vector")
    return v / n


@dataclass(frozen=True)
class RoiBox:
    """Axis-aligned edit-region box given by center and edge lengths."""

    center: np.ndarray
    dims: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", _as_vec3(self.center))
        object.__setattr__(self, "dims", _as_vec3(self.dims))
        if not np.all(self.dims > 0):
            raise ValueError(f"box dims must be positive, got {self.dims}")

    @property
    def min_corner(self) -> np.ndarray:
        return self.center - self.dims / 2.0

    @property
    def max_corner(self) -> np.ndarray:
        return self.center + self.dims / 2.0

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.dims))

    @property
    def max_extent(self) -> float:
        return float(np.max(self.dims))

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Inclusive membership test for one point (3,) or a batch (..., 3)."""
        pts = np.asarray(points, dtype=np.float64)
        inside = np.logical_and(
            pts >= self.min_corner, pts <= self.max_corner
        ).all(axis=-1)
        return inside

    def corners(self) -> np.ndarray:
        """The 8 corners, indexed by bits (x, y, z) of the corner index."""
        lo, hi = self.min_corner, self.max_corner
        out = np.empty((8, 3))
        for i in range(8):
            out[i] = [
                hi[0] if i & 1 else lo[0],
                hi[1] if i & 2 else lo[1],
                hi[2] if i & 4 else lo[2],
            ]
        return out

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "dims": self.dims.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "RoiBox":
        return cls(center=d["center"], dims=d["dims"])


# Corner-index pairs of the 12 box edges (indices into RoiBox.corners()).
BOX_EDGES = [
    (0, 1), (2, 3), (4, 5), (6, 7),  # along x
    (0, 2), (1, 3), (4, 6), (5, 7),  # along y
    (0, 4), (1, 5), (2, 6), (3, 7),  # along z
]


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float = 0.0
    t_far: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "origin", _as_vec3(self.origin))
        object.__setattr__(self, "direction", _as_vec3(self.direction))
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")
        if self.t_near < 0:
            raise ValueError("t_near must be nonnegative")
        if not self.t_near < self.t_far:
            raise ValueError("require t_near < t_far")

    def point_at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        return self.origin + t[..., None] * self.direction


@dataclass(frozen=True)
class CameraPose:
    """Camera position plus orthonormal (right, up, forward) frame.

    `afov` is the full angular field of view across the image width,
    in radians.
    """

    position: np.ndarray
    forward: np.ndarray
    up: np.ndarray
    right: np.ndarray
    afov: float

    def __post_init__(self):
        for name in ("position", "forward", "up", "right"):
            object.__setattr__(self, name, _as_vec3(getattr(self, name)))
        if not (0.0 < self.afov < math.pi) or not math.isfinite(self.afov):
            raise ValueError(f"afov must lie in (0, pi), got {self.afov}")
        f, u, r = self.forward, self.up, self.right
        for v in (f, u, r):
            if abs(np.linalg.norm(v) - 1.0) > 1e-9:
                raise ValueError("camera frame vectors must be unit length")
        if max(abs(f @ u), abs(f @ r), abs(u @ r)) > 1e-9:
            raise ValueError("camera frame must be orthonormal")

    @property
    def azimuth_deg(self) -> float:
        """Azimuth of the viewing direction, degrees in (-180, 180]."""
        return math.degrees(math.atan2(self.forward[1], self.forward[0]))

    @property
    def elevation_deg(self) -> float:
        """Elevation of the viewing direction; -90 looks straight down."""
        return math.degrees(math.asin(float(np.clip(self.forward[2], -1.0, 1.0))))

    def to_dict(self) -> dict:
        return {
            "position": self.position.tolist(),
            "look_at": (self.position + self.forward).tolist(),
            "up": self.up.tolist(),
            "afov_deg": math.degrees(self.afov),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraPose":
        up = d.get("up")
        return look_at(
            position=d["position"],
            target=d["look_at"],
            afov=math.radians(float(d["afov_deg"])),
            up_hint=up,
        )


def look_at(position, target, afov: float, up_hint=None) -> CameraPose:
    """Build a pose at `position` aimed at `target`.

    Falls back to a y-up hint when the view direction is (anti)parallel
    to world up, so top-down poses stay well defined.
    """
    position = _as_vec3(position)
    target = _as_vec3(target)
    forward = normalize(target - position)
    hint = _as_vec3(up_hint) if up_hint is not None else WORLD_UP
    if abs(float(forward @ normalize(hint))) > 1.0 - 1e-9:
        hint = np.array([0.0, 1.0, 0.0])
        if abs(float(forward @ hint)) > 1.0 - 1e-9:
            hint = np.array([1.0, 0.0, 0.0])
    right = normalize(np.cross(forward, hint))
    up = np.cross(right, forward)
    return CameraPose(position=position, forward=forward, up=up, right=right, afov=afov)


@dataclass(frozen=True)
class PoseSamplingConfig:
    """Ranges for random training cameras.

    Angles are degrees. `scene_type` selects an orbit around the ROI or a
    spiral of forward-facing poses. `recenter_prob` is the chance that the
    look target is a uniform random point inside the box instead of the
    tracked center of mass.
    """

    scene_type: str = "full-orbit"
    azimuth_range: tuple = (-180.0, 180.0)
    elevation_range: tuple = (-90.0, 15.0)
    radius_jitter: float = 0.3
    recenter_prob: float = 0.1
    spiral_radii: tuple = (0.5, 0.5, 0.25)

    def __post_init__(self):
        if self.scene_type not in ("full-orbit", "forward-facing"):
            raise ValueError(f"unknown scene_type {self.scene_type!r}")
        a0, a1 = self.azimuth_range
        e0, e1 = self.elevation_range
        if not (-180.0 <= a0 <= a1 <= 180.0):
            raise ValueError("azimuth range must be nonempty within [-180, 180]")
        if not (-90.0 <= e0 <= e1 <= 90.0):
            raise ValueError("elevation range must be nonempty within [-90, 90]")
        if not 0.0 <= self.recenter_prob <= 1.0:
            raise ValueError("recenter_prob must lie in [0, 1]")


def camera_distance(afov: float, e_max: float) -> float:
    """Camera-to-ROI distance at which a box face of extent `e_max`
    exactly spans the field of view."""
    if not 0.0 < afov < math.pi:
        raise ValueError(f"afov must lie in (0, pi), got {afov}")
    if e_max <= 0:
        raise ValueError("e_max must be positive")
    return e_max / (2.0 * math.tan(afov / 2.0))


def near_far_planes(d: float, box_diag: float, min_near: float = 0.01) -> tuple:
    """Near/far planes bracketing a box of diagonal `box_diag` seen from
    distance `d`. Near is clamped to `min_near` when the camera is close."""
    if d <= 0 or box_diag <= 0:
        raise ValueError("d and box_diag must be positive")
    near = max(min_near, d - box_diag / 2.0)
    far = d + box_diag
    return near, far


def _orbit_forward(azimuth_deg: float, elevation_deg: float) -> np.ndarray:
    az = math.radians(azimuth_deg)
    el = math.radians(elevation_deg)
    return np.array(
        [math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)]
    )


def sample_pose(
    cfg: PoseSamplingConfig,
    box: RoiBox,
    afov: float,
    center_of_mass: np.ndarray,
    rng: np.random.Generator,
) -> CameraPose:
    """Draw one random training camera.

    Orbit scenes sample azimuth/elevation within the configured ranges and a
    radius jittered around the distance where the box spans the view.
    Forward-facing scenes walk a spiral of offsets in the camera plane of a
    base pose. Either way the camera aims at the tracked center of mass,
    except with probability `recenter_prob` at a random point in the box.
    """
    center_of_mass = _as_vec3(center_of_mass)
    d0 = camera_distance(afov, box.max_extent)

    if cfg.scene_type == "full-orbit":
        theta = rng.uniform(*cfg.azimuth_range)
        phi = rng.uniform(*cfg.elevation_range)
        radius = d0 * rng.uniform(1.0 - cfg.radius_jitter, 1.0 + cfg.radius_jitter)
        target = _maybe_recenter(cfg, box, center_of_mass, rng)
        position = target - radius * _orbit_forward(theta, phi)
        return look_at(position, target, afov)

    # forward-facing: spiral offsets from a base pose on the -x side
    t = rng.uniform(0.0, 4.0 * math.pi)
    base = look_at(center_of_mass - d0 * np.array([1.0, 0.0, 0.0]), center_of_mass, afov)
    rx, ry, rz = cfg.spiral_radii
    offset = (
        base.right * (rx * math.cos(t))
        + base.up * (ry * math.sin(t))
        + base.forward * (rz * math.sin(t / 2.0))
    )
    target = _maybe_recenter(cfg, box, center_of_mass, rng)
    return look_at(base.position + offset, target, afov)


def _maybe_recenter(cfg, box, center_of_mass, rng) -> np.ndarray:
    u = rng.uniform()
    point = box.min_corner + rng.uniform(size=3) * box.dims
    return point if u < cfg.recenter_prob else center_of_mass


def intersect_rays_aabb(
    origins: np.ndarray,
    directions: np.ndarray,
    box: RoiBox,
    t_near=0.0,
    t_far=math.inf,
):
    """Slab intersection for a batch of rays.

    origins, directions: (R, 3). Returns (hit (R,), t_enter (R,), t_exit (R,))
    with the interval clamped into [t_near, t_far]; misses and measure-zero
    grazes have hit=False.
    """
    origins = np.asarray(origins, dtype=np.float64)
    directions = np.asarray(directions, dtype=np.float64)
    t_near = np.broadcast_to(np.asarray(t_near, dtype=np.float64), origins.shape[:1])
    t_far = np.broadcast_to(np.asarray(t_far, dtype=np.float64), origins.shape[:1])

    lo = box.min_corner - origins  # (R, 3)
    hi = box.max_corner - origins
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        inv = 1.0 / directions
        t0 = lo * inv
        t1 = hi * inv
    tmin_axis = np.minimum(t0, t1)
    tmax_axis = np.maximum(t0, t1)
    # Axes with zero direction: the slab interval is everything if the
    # origin lies inside the slab, empty otherwise. Overridden after the
    # min/max so an empty interval stays inverted.
    degenerate = directions == 0.0
    inside_slab = (lo <= 0.0) & (hi >= 0.0)
    tmin_axis = np.where(degenerate, np.where(inside_slab, -np.inf, np.inf), tmin_axis)
    tmax_axis = np.where(degenerate, np.where(inside_slab, np.inf, -np.inf), tmax_axis)

    t_enter = np.maximum(tmin_axis.max(axis=-1), t_near)
    t_exit = np.minimum(tmax_axis.min(axis=-1), t_far)
    hit = t_enter < t_exit
    return hit, t_enter, t_exit


def ray_box_intersect(ray: Ray, box: RoiBox):
    """Intersection interval of a single ray with the box, or None."""
    hit, t_enter, t_exit = intersect_rays_aabb(
        ray.origin[None], ray.direction[None], box, ray.t_near, ray.t_far
    )
    if not hit[0]:
        return None
    return float(t_enter[0]), float(t_exit[0])


def focal_length(afov: float, width: int) -> float:
    """Pinhole focal length in pixels for a view `width` pixels across."""
    return (width / 2.0) / math.tan(afov / 2.0)


def project_points(pose: CameraPose, points: np.ndarray, height: int, width: int):
    """Pinhole projection of world points.

    Returns (pixels (N, 2) as float (u, v), depth (N,) Euclidean distance
    from the camera, in_front (N,) bool). v grows downward; the pixel grid
    covers [0, W) x [0, H).
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    rel = points - pose.position
    x = rel @ pose.right
    y = rel @ pose.up
    z = rel @ pose.forward
    in_front = z > 1e-9
    f = focal_length(pose.afov, width)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = width / 2.0 + f * x / z
        v = height / 2.0 - f * y / z
    pixels = np.stack([u, v], axis=-1)
    depth = np.linalg.norm(rel, axis=-1)
    return pixels, depth, in_front


@dataclass(frozen=True)
class EdgeSample:
    """One projected sample point of a box edge."""

    edge: int
    pixel: np.ndarray  # (u, v) float pixel coordinates
    visible: bool


def project_box_edges(
    box: RoiBox,
    pose: CameraPose,
    depth_map: np.ndarray,
    samples_per_edge: int = 32,
) -> list:
    """Project the 12 box edges onto the image and flag depth occlusion.

    `depth_map` holds per-pixel scene depth as Euclidean distance from the
    camera (same metric as rendered ray depth). Samples behind the camera or
    outside the image are dropped; a sample is visible when it is no farther
    than the scene surface at its pixel, within a small relative tolerance.
    """
    if samples_per_edge < 2:
        raise ValueError("samples_per_edge must be at least 2")
    depth_map = np.asarray(depth_map, dtype=np.float64)
    height, width = depth_map.shape
    corners = box.corners()
    fractions = np.linspace(0.0, 1.0, samples_per_edge)

    out = []
    for edge_idx, (a, b) in enumerate(BOX_EDGES):
        points = corners[a] + fractions[:, None] * (corners[b] - corners[a])
        pixels, depth, in_front = project_points(pose, points, height, width)
        for k in range(samples_per_edge):
            if not in_front[k]:
                continue
            u, v = pixels[k]
            if not (0.0 <= u < width and 0.0 <= v < height):
                continue
            scene_depth = depth_map[int(v), int(u)]
            visible = bool(depth[k] <= scene_depth * (1.0 + OCCLUSION_DEPTH_RTOL))
            out.append(EdgeSample(edge=edge_idx, pixel=pixels[k].copy(), visible=visible))
    return out
