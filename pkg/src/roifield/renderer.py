"""Volume rendering.

Rays are marched with the standard emission-absorption quadrature:
per-sample opacity a_i = 1 - exp(-sigma_i * delta_i), transmittance
T_i = exp(-sum_{j<i} sigma_j delta_j), pixel color sum_i T_i a_i c_i plus
the remaining transmittance times the background. ROI-restricted rendering
keeps the same sample grid and zeroes density outside the box, so rays that
miss the box see pure background.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import torch

from . import geometry
from .fields import EMPTY_RAW_DENSITY, RadianceField, density_activation
from .geometry import CameraPose, Ray, RoiBox

QUERY_CHUNK = 1 << 18  # field-query batch cap, keeps peak memory flat
EPS_ACCUM = 1e-10  # floors for depth / disparity denominators


@dataclass(frozen=True)
class RenderSettings:
    """Per-render sampling parameters."""

    near: float
    far: float
    n_samples: int = 64
    stratified: bool = False

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not 0 <= self.near < self.far:
            raise ValueError("require 0 <= near < far")


@dataclass(frozen=True)
class RaySamples:
    """Sample positions along one ray with their quadrature spacings."""

    t: np.ndarray          # (N,) ascending
    deltas: np.ndarray     # (N,), last spacing runs to the far plane
    positions: np.ndarray  # (N, 3)
    direction: np.ndarray  # (3,)


@dataclass(frozen=True)
class BackgroundSpec:
    """Procedural background image generator settings."""

    kind: str = "white"
    seed: int = 0
    noise_sigma: float = 0.2
    cell: int = 8
    colors: tuple | None = None  # checkerboard colors, random when None
    n_waves: int = 8
    max_frequency: float = 16.0

    KINDS = ("white", "black", "gaussian-noise", "checkerboard", "fourier-texture")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown background kind {self.kind!r}")


@dataclass
class RenderOutput:
    """Rendered view. Tensors keep any gradient graph they were made with."""

    rgb: torch.Tensor                  # (H, W, 3) in [0, 1]
    disparity: torch.Tensor            # (H, W) nonnegative
    depth: torch.Tensor                # (H, W) accumulation-weighted ray depth
    final_transmittance: torch.Tensor  # (H, W) in [0, 1]

    @property
    def mean_transmittance(self) -> torch.Tensor:
        return self.final_transmittance.mean()

    def detached(self) -> "RenderOutput":
        return RenderOutput(
            rgb=self.rgb.detach(),
            disparity=self.disparity.detach(),
            depth=self.depth.detach(),
            final_transmittance=self.final_transmittance.detach(),
        )

    def rgb_array(self) -> np.ndarray:
        return self.rgb.detach().numpy().astype(np.float64)


@dataclass(frozen=True)
class RoiRenderAux:
    """Inside-box sample stats from an ROI render, for center-of-mass
    tracking. Arrays are detached."""

    positions: np.ndarray  # (M, 3)
    densities: np.ndarray  # (M,) activated


def _resolution(resolution) -> tuple:
    if isinstance(resolution, int):
        res = (resolution, resolution)
    else:
        res = (int(resolution[0]), int(resolution[1]))
    if res[0] < 1 or res[1] < 1:
        raise ValueError(f"invalid resolution {resolution!r}")
    return res


def sample_ts(
    near, far, n: int, stratified: bool = False, rng: np.random.Generator | None = None
) -> np.ndarray:
    """Sample t values in [near, far) for a batch of rays.

    near, far: scalars or (R,). Returns (R, n) float64. Deterministic bin
    midpoints unless stratified, in which case one uniform draw lands in
    each bin.
    """
    near = np.atleast_1d(np.asarray(near, dtype=np.float64))
    far = np.atleast_1d(np.asarray(far, dtype=np.float64))
    near, far = np.broadcast_arrays(near, far)
    n_rays = near.shape[0]
    edges = np.linspace(0.0, 1.0, n + 1)[None, :]  # (1, n+1)
    if stratified:
        if rng is None:
            raise ValueError("stratified sampling needs an rng")
        offsets = rng.uniform(size=(n_rays, n))
    else:
        offsets = 0.5
    frac = edges[:, :-1] + offsets * (edges[:, 1:] - edges[:, :-1])
    return near[:, None] + frac * (far - near)[:, None]


def deltas_from_ts(ts: np.ndarray, far) -> np.ndarray:
    """Quadrature spacings: differences of consecutive t, last one extends
    to the far plane."""
    far = np.broadcast_to(np.asarray(far, dtype=np.float64), ts.shape[:1])
    deltas = np.empty_like(ts)
    deltas[:, :-1] = ts[:, 1:] - ts[:, :-1]
    deltas[:, -1] = far - ts[:, -1]
    return deltas


def sample_along_ray(
    ray: Ray, n: int, stratified: bool = False, rng: np.random.Generator | None = None
) -> RaySamples:
    """Sample one ray between its near and far planes."""
    ts = sample_ts(ray.t_near, ray.t_far, n, stratified, rng)[0]
    deltas = deltas_from_ts(ts[None, :], ray.t_far)[0]
    return RaySamples(
        t=ts,
        deltas=deltas,
        positions=ray.origin + ts[:, None] * ray.direction,
        direction=ray.direction.copy(),
    )


def composite_activated(
    sigma: torch.Tensor, rgb: torch.Tensor, deltas: torch.Tensor, background: torch.Tensor
):
    """Quadrature over already-activated densities and colors.

    sigma: (R, N) >= 0, rgb: (R, N, 3) in [0, 1], deltas: (R, N),
    background: (R, 3). Returns (pixel rgb (R, 3), weights (R, N),
    t_final (R,)). Weights and final transmittance always sum to one.
    """
    optical = sigma * deltas
    accum = torch.cumsum(optical, dim=-1)
    trans = torch.exp(-torch.cat([torch.zeros_like(accum[:, :1]), accum], dim=-1))
    weights = trans[:, :-1] - trans[:, 1:]  # T_i * (1 - exp(-sigma_i delta_i))
    t_final = trans[:, -1]
    out = (weights[..., None] * rgb).sum(dim=-2) + t_final[:, None] * background
    return out, weights, t_final


def composite(
    sigma_raw: torch.Tensor,
    color_raw: torch.Tensor,
    deltas: torch.Tensor,
    activation: str = "softplus",
    background=(0.0, 0.0, 0.0),
):
    """Quadrature over raw field outputs: density through the activation,
    color through a sigmoid."""
    phi = density_activation(activation)
    sigma = phi(sigma_raw)
    rgb = torch.sigmoid(color_raw)
    bg = torch.as_tensor(background, dtype=sigma_raw.dtype)
    if bg.ndim == 1:
        bg = bg.expand(sigma_raw.shape[0], 3)
    return composite_activated(sigma, rgb, deltas, bg)


def pixel_rays(pose: CameraPose, height: int, width: int):
    """Unit rays through every pixel center. Returns (origins (H*W, 3),
    directions (H*W, 3)) in row-major pixel order, float64."""
    focal = geometry.focal_length(pose.afov, width)
    cols = (np.arange(width) + 0.5 - width / 2.0) / focal
    rows = (height / 2.0 - (np.arange(height) + 0.5)) / focal
    xg, yg = np.meshgrid(cols, rows)  # (H, W)
    dirs = (
        xg[..., None] * pose.right
        + yg[..., None] * pose.up
        + pose.forward
    ).reshape(-1, 3)
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    origins = np.broadcast_to(pose.position, dirs.shape).copy()
    return origins, dirs


def query_field(field: RadianceField, positions: torch.Tensor, directions: torch.Tensor):
    """Chunked field query, (M, 3) inputs; keeps autograd intact."""
    m = positions.shape[0]
    if m <= QUERY_CHUNK:
        return field.query(positions, directions)
    sigmas, colors = [], []
    for start in range(0, m, QUERY_CHUNK):
        s, c = field.query(positions[start : start + QUERY_CHUNK],
                           directions[start : start + QUERY_CHUNK])
        sigmas.append(s)
        colors.append(c)
    return torch.cat(sigmas), torch.cat(colors)


def _ray_maps(weights: torch.Tensor, ts: torch.Tensor, t_final: torch.Tensor):
    """(depth, disparity) per ray from quadrature weights."""
    acc = weights.sum(dim=-1)
    wt = (weights * ts).sum(dim=-1)
    depth = wt / torch.clamp(acc, min=EPS_ACCUM)
    disparity = acc / torch.clamp(wt, min=EPS_ACCUM)
    return depth, disparity


def _finalize(rgb, depth, disparity, t_final, height, width) -> RenderOutput:
    return RenderOutput(
        rgb=rgb.reshape(height, width, 3),
        disparity=disparity.reshape(height, width),
        depth=depth.reshape(height, width),
        final_transmittance=t_final.reshape(height, width),
    )


def _background_image(background, height, width, dtype, rng) -> torch.Tensor:
    """Normalize the background argument to an (H*W, 3) tensor."""
    if isinstance(background, BackgroundSpec):
        img = make_background(background, (height, width), rng)
    else:
        img = np.asarray(background, dtype=np.float64)
        if img.ndim == 1:
            img = np.broadcast_to(img, (height, width, 3))
        if img.shape != (height, width, 3):
            raise ValueError(f"background shape {img.shape} != {(height, width, 3)}")
    return torch.as_tensor(np.ascontiguousarray(img), dtype=dtype).reshape(-1, 3)


def render_view(
    field: RadianceField,
    pose: CameraPose,
    resolution,
    settings: RenderSettings,
    background=(0.0, 0.0, 0.0),
    rng: np.random.Generator | None = None,
) -> RenderOutput:
    """Render the full scene from a pose."""
    height, width = _resolution(resolution)
    dtype = field.dtype
    origins, dirs = pixel_rays(pose, height, width)
    n_rays = origins.shape[0]
    ts = sample_ts(np.full(n_rays, settings.near), settings.far,
                   settings.n_samples, settings.stratified, rng)
    deltas = deltas_from_ts(ts, settings.far)

    positions = origins[:, None, :] + ts[..., None] * dirs[:, None, :]
    n = settings.n_samples
    pos_t = torch.as_tensor(positions.reshape(-1, 3), dtype=dtype)
    dir_t = torch.as_tensor(np.repeat(dirs, n, axis=0), dtype=dtype)
    sigma_raw, color_raw = query_field(field, pos_t, dir_t)
    sigma_raw = sigma_raw.reshape(-1, n)
    color_raw = color_raw.reshape(-1, n, 3)

    bg = _background_image(background, height, width, dtype, rng)
    deltas_t = torch.as_tensor(deltas, dtype=dtype)
    rgb, weights, t_final = composite(sigma_raw, color_raw, deltas_t,
                                      field.activation, bg)
    depth, disparity = _ray_maps(weights, torch.as_tensor(ts, dtype=dtype), t_final)
    return _finalize(rgb, depth, disparity, t_final, height, width)


def render_roi(
    field: RadianceField,
    box: RoiBox,
    pose: CameraPose,
    resolution,
    settings: RenderSettings,
    background=(0.0, 0.0, 0.0),
    rng: np.random.Generator | None = None,
    return_aux: bool = False,
):
    """Render only the content inside the box.

    Rays that miss the box get pure background with full transmittance.
    Rays that hit it are sampled on the ordinary grid with the density of
    every sample outside the box forced to empty.
    """
    height, width = _resolution(resolution)
    dtype = field.dtype
    origins, dirs = pixel_rays(pose, height, width)
    n_rays = origins.shape[0]
    hit, _, _ = geometry.intersect_rays_aabb(
        origins, dirs, box, settings.near, settings.far
    )
    bg = _background_image(background, height, width, dtype, rng)

    rgb = bg.clone()
    depth = torch.zeros(n_rays, dtype=dtype)
    disparity = torch.zeros(n_rays, dtype=dtype)
    t_final = torch.ones(n_rays, dtype=dtype)

    idx = np.flatnonzero(hit)
    if idx.size:
        sub_o, sub_d = origins[idx], dirs[idx]
        n = settings.n_samples
        ts = sample_ts(np.full(idx.size, settings.near), settings.far, n,
                       settings.stratified, rng)
        deltas = deltas_from_ts(ts, settings.far)
        positions = sub_o[:, None, :] + ts[..., None] * sub_d[:, None, :]
        inside = box.contains(positions)  # (R, N)

        pos_t = torch.as_tensor(positions.reshape(-1, 3), dtype=dtype)
        dir_t = torch.as_tensor(np.repeat(sub_d, n, axis=0), dtype=dtype)
        sigma_raw, color_raw = query_field(field, pos_t, dir_t)
        sigma_raw = sigma_raw.reshape(-1, n)
        color_raw = color_raw.reshape(-1, n, 3)
        inside_t = torch.as_tensor(inside)
        sigma_raw = torch.where(
            inside_t, sigma_raw, torch.as_tensor(EMPTY_RAW_DENSITY, dtype=dtype)
        )

        deltas_t = torch.as_tensor(deltas, dtype=dtype)
        idx_t = torch.as_tensor(idx)
        sub_rgb, weights, sub_tf = composite(
            sigma_raw, color_raw, deltas_t, field.activation, bg[idx_t]
        )
        sub_depth, sub_disp = _ray_maps(
            weights, torch.as_tensor(ts, dtype=dtype), sub_tf
        )
        rgb = rgb.index_copy(0, idx_t, sub_rgb)
        depth = depth.index_copy(0, idx_t, sub_depth)
        disparity = disparity.index_copy(0, idx_t, sub_disp)
        t_final = t_final.index_copy(0, idx_t, sub_tf)
        aux_positions = positions[inside]
        phi = density_activation(field.activation)
        aux_density = phi(sigma_raw.detach())[inside_t].numpy()
    else:
        aux_positions = np.zeros((0, 3))
        aux_density = np.zeros(0)

    out = _finalize(rgb, depth, disparity, t_final, height, width)
    if return_aux:
        return out, RoiRenderAux(positions=aux_positions, densities=aux_density)
    return out


def occlusion_depth(output: RenderOutput, far: float) -> np.ndarray:
    """Scene depth for visibility tests: expected ray termination with the
    background treated as a far-plane surface."""
    acc = (1.0 - output.final_transmittance).detach().numpy()
    depth = output.depth.detach().numpy()
    return depth * acc + output.final_transmittance.detach().numpy() * far


def make_background(
    spec: BackgroundSpec, resolution, rng: np.random.Generator | None = None
) -> np.ndarray:
    """Generate an (H, W, 3) float64 background image in [0, 1].

    Deterministic given the spec seed (or the supplied rng state).
    """
    height, width = _resolution(resolution)
    if rng is None:
        rng = np.random.default_rng(spec.seed)

    if spec.kind == "white":
        return np.ones((height, width, 3))
    if spec.kind == "black":
        return np.zeros((height, width, 3))
    if spec.kind == "gaussian-noise":
        img = rng.normal(0.5, spec.noise_sigma, size=(height, width, 3))
        return np.clip(img, 0.0, 1.0)
    if spec.kind == "checkerboard":
        if spec.colors is not None:
            c0 = np.asarray(spec.colors[0], dtype=np.float64)
            c1 = np.asarray(spec.colors[1], dtype=np.float64)
        else:
            c0 = rng.uniform(size=3)
            c1 = rng.uniform(size=3)
        ys, xs = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
        parity = ((xs // spec.cell) + (ys // spec.cell)) % 2
        img = np.where(parity[..., None] == 0, c0, c1)
        return np.clip(img, 0.0, 1.0)
    if spec.kind == "fourier-texture":
        ys, xs = np.meshgrid(
            np.linspace(0.0, 1.0, height), np.linspace(0.0, 1.0, width), indexing="ij"
        )
        img = np.zeros((height, width, 3))
        for ch in range(3):
            acc = np.zeros((height, width))
            for _ in range(spec.n_waves):
                freq = rng.uniform(-spec.max_frequency, spec.max_frequency, size=2)
                phase = rng.uniform(0.0, 2.0 * math.pi)
                amp = rng.uniform(0.2, 1.0)
                acc += amp * np.sin(2.0 * math.pi * (freq[0] * xs + freq[1] * ys) + phase)
            lo, hi = acc.min(), acc.max()
            img[..., ch] = (acc - lo) / (hi - lo) if hi > lo else 0.5
        return img
    raise ValueError(f"unknown background kind {spec.kind!r}")


def upsample_bilinear(image: torch.Tensor, size: int) -> torch.Tensor:
    """Resize an (H, W, 3) image tensor with bilinear filtering."""
    batched = image.permute(2, 0, 1)[None]
    out = torch.nn.functional.interpolate(
        batched, size=(size, size), mode="bilinear", align_corners=False
    )
    return out[0].permute(1, 2, 0)
