"""Volumetric blending of an original and a generated radiance field.

Inside the ROI box three mechanisms are available: plain replacement,
distance-smoothed compositing of raw densities/colors around the tracked
density center, and object blending that mixes per-point opacities into a
sigmoid color and sums densities inside or outside the activation (the
in-activation sum lets the generator remove original density, the
out-activation sum can only add). Outside the box the original field always
wins.
"""

from __future__ import annotations

from dataclasses import dataclass, replace as dc_replace

import numpy as np
import torch

from . import geometry, renderer
from .fields import FieldSample, RadianceField, density_activation
from .geometry import CameraPose, RoiBox
from .renderer import RenderOutput, RenderSettings, RoiRenderAux

BLEND_VARIANTS = (
    "replace",
    "smooth",
    "object-blend-in-activation",
    "object-blend-out-activation",
)


@dataclass(frozen=True)
class BlendMode:
    variant: str = "replace"
    alpha: float = 1.0      # smoothing strength for the smooth variant
    eps: float = 1e-9       # stability constant in the color mix

    def __post_init__(self):
        if self.variant not in BLEND_VARIANTS:
            raise ValueError(f"unknown blend variant {self.variant!r}")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.eps <= 0:
            raise ValueError("eps must be positive")

    @property
    def is_object_blend(self) -> bool:
        return self.variant.startswith("object-blend")

    @property
    def density_mode(self) -> str:
        return "in-activation" if self.variant.endswith("in-activation") else "out-activation"

    def to_dict(self) -> dict:
        return {"variant": self.variant, "alpha": self.alpha, "eps": self.eps}

    @classmethod
    def from_dict(cls, d: dict) -> "BlendMode":
        return cls(variant=d["variant"], alpha=float(d.get("alpha", 1.0)),
                   eps=float(d.get("eps", 1e-9)))


@dataclass(frozen=True)
class CenterTracker:
    """Exponential moving average of the density center of mass in the box."""

    ema_center: np.ndarray | None = None
    decay: float = 0.99

    def __post_init__(self):
        if not 0.0 < self.decay < 1.0 and self.decay != 1.0:
            raise ValueError("decay must lie in (0, 1]")

    @property
    def initialized(self) -> bool:
        return self.ema_center is not None

    def center_or(self, fallback: np.ndarray) -> np.ndarray:
        return self.ema_center if self.initialized else np.asarray(fallback, dtype=np.float64)

    def to_dict(self) -> dict:
        return {
            "ema_center": None if self.ema_center is None else self.ema_center.tolist(),
            "decay": self.decay,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CenterTracker":
        ema = d.get("ema_center")
        return cls(
            ema_center=None if ema is None else np.asarray(ema, dtype=np.float64),
            decay=float(d.get("decay", 0.99)),
        )


def update_center(
    tracker: CenterTracker, positions: np.ndarray, densities: np.ndarray
) -> CenterTracker:
    """Fold one batch of in-box samples into the tracked center.

    The batch center is the density-weighted mean of the positions (plain
    mean if every density is negligible). The first batch initializes the
    average; empty batches leave the tracker unchanged.
    """
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    densities = np.asarray(densities, dtype=np.float64).reshape(-1)
    if positions.shape[0] == 0:
        return tracker
    if np.all(densities < 1e-8):
        batch = positions.mean(axis=0)
    else:
        batch = (densities[:, None] * positions).sum(axis=0) / densities.sum()
    if not tracker.initialized:
        return dc_replace(tracker, ema_center=batch)
    ema = tracker.decay * tracker.ema_center + (1.0 - tracker.decay) * batch
    return dc_replace(tracker, ema_center=ema)


def smooth_blend_weight(x, center, diag: float, alpha: float):
    """Distance-smoothing weight: 0 at the center (all weight to the
    generated field), approaching 1 with distance and alpha.

    Works on a single point or an (..., 3) batch, numpy or torch.
    """
    if diag <= 0:
        raise ValueError("diag must be positive")
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    if isinstance(x, torch.Tensor):
        c = torch.as_tensor(center, dtype=x.dtype)
        dist = torch.linalg.vector_norm(x - c, dim=-1)
        return 1.0 - torch.exp(-alpha * dist / diag)
    x = np.asarray(x, dtype=np.float64)
    dist = np.linalg.norm(x - np.asarray(center, dtype=np.float64), axis=-1)
    return 1.0 - np.exp(-alpha * dist / diag)


def blend_smooth(sample_original, sample_generated, f):
    """Convex mix of two raw field samples: weight f on the original."""
    if isinstance(sample_original, FieldSample):
        return FieldSample(
            raw_density=f * sample_original.raw_density
            + (1.0 - f) * sample_generated.raw_density,
            raw_color=f * sample_original.raw_color
            + (1.0 - f) * sample_generated.raw_color,
        )
    return (
        f * sample_original + (1.0 - f) * sample_generated
    )


def per_point_alphas(sigma_raw_original, sigma_raw_generated, delta, activation="softplus"):
    """Per-point opacities 1 - exp(-phi(sigma) * delta) for both fields."""
    phi = density_activation(activation)
    s_o = torch.as_tensor(sigma_raw_original)
    s_g = torch.as_tensor(sigma_raw_generated)
    d = torch.as_tensor(delta, dtype=s_o.dtype)
    alpha_o = 1.0 - torch.exp(-phi(s_o) * d)
    alpha_g = 1.0 - torch.exp(-phi(s_g) * d)
    return alpha_o, alpha_g


def blend_color_alpha(color_raw_original, color_raw_generated, alpha_o, alpha_g, eps=1e-9):
    """Opacity-weighted mix of raw colors through a sigmoid."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    c_o = torch.as_tensor(color_raw_original)
    c_g = torch.as_tensor(color_raw_generated)
    a_o = torch.as_tensor(alpha_o, dtype=c_o.dtype)
    a_g = torch.as_tensor(alpha_g, dtype=c_o.dtype)
    mixed = (c_o * a_o[..., None] + c_g * a_g[..., None]) / (eps + a_o + a_g)[..., None]
    return torch.sigmoid(mixed)


def blend_density(mode: str, sigma_raw_original, sigma_raw_generated, activation="softplus"):
    """Combined activated density: summing raw densities inside the
    activation permits removal, summing activated densities outside only
    ever adds."""
    phi = density_activation(activation)
    s_o = torch.as_tensor(sigma_raw_original)
    s_g = torch.as_tensor(sigma_raw_generated)
    if mode == "in-activation":
        return phi(s_o + s_g)
    if mode == "out-activation":
        return phi(s_o) + phi(s_g)
    raise ValueError(f"unknown density mode {mode!r}")


def _blended_point_values(
    mode: BlendMode,
    activation: str,
    sigma_o: torch.Tensor,
    color_o: torch.Tensor,
    sigma_g: torch.Tensor,
    color_g: torch.Tensor,
    positions: torch.Tensor,
    deltas: torch.Tensor,
    center,
    diag: float,
):
    """Activated (sigma, rgb) for in-box samples under the given mode."""
    phi = density_activation(activation)
    if mode.variant == "replace":
        return phi(sigma_g), torch.sigmoid(color_g)
    if mode.variant == "smooth":
        f = smooth_blend_weight(positions, center, diag, mode.alpha)
        sigma = phi(f * sigma_o + (1.0 - f) * sigma_g)
        rgb = torch.sigmoid(f[..., None] * color_o + (1.0 - f[..., None]) * color_g)
        return sigma, rgb
    alpha_o, alpha_g = per_point_alphas(sigma_o, sigma_g, deltas, activation)
    rgb = blend_color_alpha(color_o, color_g, alpha_o, alpha_g, mode.eps)
    sigma = blend_density(mode.density_mode, sigma_o, sigma_g, activation)
    return sigma, rgb


def render_blended(
    field_original: RadianceField,
    field_generated: RadianceField,
    box: RoiBox,
    mode: BlendMode,
    pose: CameraPose,
    resolution,
    settings: RenderSettings,
    background=(0.0, 0.0, 0.0),
    center=None,
    rng: np.random.Generator | None = None,
) -> RenderOutput:
    """Render the edited scene: original field outside the box, mode-blended
    values inside, composited along the shared sample grid.

    `center` is the frozen training-time density center used by the smooth
    variant; it defaults to the box center.
    """
    height, width = renderer._resolution(resolution)
    dtype = field_original.dtype
    activation = field_original.activation
    center = box.center if center is None else np.asarray(center, dtype=np.float64)

    origins, dirs = renderer.pixel_rays(pose, height, width)
    n_rays = origins.shape[0]
    n = settings.n_samples
    ts = renderer.sample_ts(np.full(n_rays, settings.near), settings.far, n,
                            settings.stratified, rng)
    deltas = renderer.deltas_from_ts(ts, settings.far)
    positions = origins[:, None, :] + ts[..., None] * dirs[:, None, :]
    inside = box.contains(positions)  # (R, N)

    pos_t = torch.as_tensor(positions.reshape(-1, 3), dtype=dtype)
    dir_t = torch.as_tensor(np.repeat(dirs, n, axis=0), dtype=dtype)
    with torch.no_grad():
        sigma_o, color_o = renderer.query_field(field_original, pos_t, dir_t)
    phi = density_activation(activation)
    sigma_act = phi(sigma_o)
    rgb_act = torch.sigmoid(color_o)

    inside_t = torch.as_tensor(inside.reshape(-1))
    if bool(inside_t.any()):
        with torch.no_grad():
            sigma_g, color_g = renderer.query_field(field_generated, pos_t, dir_t)
        deltas_flat = torch.as_tensor(deltas.reshape(-1), dtype=dtype)
        blend_sigma, blend_rgb = _blended_point_values(
            mode, activation, sigma_o, color_o, sigma_g, color_g,
            pos_t, deltas_flat, center, box.diagonal,
        )
        sigma_act = torch.where(inside_t, blend_sigma, sigma_act)
        rgb_act = torch.where(inside_t[:, None], blend_rgb, rgb_act)

    bg = renderer._background_image(background, height, width, dtype, rng)
    rgb, weights, t_final = renderer.composite_activated(
        sigma_act.reshape(n_rays, n),
        rgb_act.reshape(n_rays, n, 3),
        torch.as_tensor(deltas, dtype=dtype),
        bg,
    )
    depth, disparity = renderer._ray_maps(
        weights, torch.as_tensor(ts, dtype=dtype), t_final
    )
    return renderer._finalize(rgb, depth, disparity, t_final, height, width)


def render_roi_blended(
    field_original: RadianceField,
    field_generated: RadianceField,
    box: RoiBox,
    mode: BlendMode,
    pose: CameraPose,
    resolution,
    settings: RenderSettings,
    background=(0.0, 0.0, 0.0),
    center=None,
    rng: np.random.Generator | None = None,
    return_aux: bool = False,
):
    """Training render for object blending: only in-box content is visible,
    blended from both fields; everything outside the box is empty. Gradients
    flow into the generated field only.
    """
    height, width = renderer._resolution(resolution)
    dtype = field_generated.dtype
    activation = field_generated.activation
    center = box.center if center is None else np.asarray(center, dtype=np.float64)

    origins, dirs = renderer.pixel_rays(pose, height, width)
    n_rays = origins.shape[0]
    hit, _, _ = geometry.intersect_rays_aabb(origins, dirs, box, settings.near, settings.far)
    bg = renderer._background_image(background, height, width, dtype, rng)

    rgb = bg.clone()
    depth = torch.zeros(n_rays, dtype=dtype)
    disparity = torch.zeros(n_rays, dtype=dtype)
    t_final = torch.ones(n_rays, dtype=dtype)
    aux_positions = np.zeros((0, 3))
    aux_density = np.zeros(0)

    idx = np.flatnonzero(hit)
    if idx.size:
        sub_o, sub_d = origins[idx], dirs[idx]
        n = settings.n_samples
        ts = renderer.sample_ts(np.full(idx.size, settings.near), settings.far, n,
                                settings.stratified, rng)
        deltas = renderer.deltas_from_ts(ts, settings.far)
        positions = sub_o[:, None, :] + ts[..., None] * sub_d[:, None, :]
        inside = box.contains(positions)

        pos_t = torch.as_tensor(positions.reshape(-1, 3), dtype=dtype)
        dir_t = torch.as_tensor(np.repeat(sub_d, n, axis=0), dtype=dtype)
        with torch.no_grad():
            sigma_o, color_o = renderer.query_field(field_original, pos_t, dir_t)
        sigma_g, color_g = renderer.query_field(field_generated, pos_t, dir_t)
        deltas_flat = torch.as_tensor(deltas.reshape(-1), dtype=dtype)
        blend_sigma, blend_rgb = _blended_point_values(
            mode, activation, sigma_o, color_o, sigma_g, color_g,
            pos_t, deltas_flat, center, box.diagonal,
        )
        inside_t = torch.as_tensor(inside.reshape(-1))
        sigma_act = torch.where(inside_t, blend_sigma, torch.zeros((), dtype=dtype))
        rgb_act = torch.where(inside_t[:, None], blend_rgb, torch.sigmoid(color_o))

        idx_t = torch.as_tensor(idx)
        sub_rgb, weights, sub_tf = renderer.composite_activated(
            sigma_act.reshape(idx.size, n),
            rgb_act.reshape(idx.size, n, 3),
            torch.as_tensor(deltas, dtype=dtype),
            bg[idx_t],
        )
        sub_depth, sub_disp = renderer._ray_maps(
            weights, torch.as_tensor(ts, dtype=dtype), sub_tf
        )
        rgb = rgb.index_copy(0, idx_t, sub_rgb)
        depth = depth.index_copy(0, idx_t, sub_depth)
        disparity = disparity.index_copy(0, idx_t, sub_disp)
        t_final = t_final.index_copy(0, idx_t, sub_tf)
        aux_positions = positions[inside]
        aux_density = sigma_act.detach().reshape(idx.size, n)[torch.as_tensor(inside)].numpy()

    out = renderer._finalize(rgb, depth, disparity, t_final, height, width)
    if return_aux:
        return out, RoiRenderAux(positions=aux_positions, densities=aux_density)
    return out
