"""Guided optimization of the generated field.

Each step draws a random camera around the ROI, renders the box contents
over a fresh augmented background, scores the view against the prompt, and
takes one Adam step on the generated field only. The original field is
never touched. Train state (parameters, optimizer moments, rng, center
tracker) serializes exactly, so a resumed run reproduces an uninterrupted
one bit for bit.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
import torch

from . import blending, fields, geometry, guidance, renderer
from .blending import BlendMode, CenterTracker
from .fields import MlpField
from .geometry import PoseSamplingConfig, RoiBox
from .guidance import LossConfig
from .renderer import BackgroundSpec, RenderSettings

TRAIN_STATE_FORMAT = "roifield-train-state"
TRAIN_STATE_VERSION = 1

DEFAULT_BACKGROUND_KINDS = ("gaussian-noise", "checkerboard", "fourier-texture")


class TrainingDiverged(RuntimeError):
    """Raised when a step produces a non-finite loss; carries diagnostics."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class TrainConfig:
    steps: int = 500
    lr_init: float = 5e-4
    lr_final: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 10.0
    seed: int = 123
    afov_deg: float = 60.0
    render_resolution: int = 168
    n_samples: int = 64
    stratified: bool = True
    min_near: float = 0.01
    ema_decay: float = 0.99
    pose: PoseSamplingConfig = dc_field(default_factory=PoseSamplingConfig)
    loss: LossConfig = dc_field(default_factory=LossConfig)
    mode: BlendMode = dc_field(default_factory=BlendMode)
    freeze_density: bool = False
    background_kinds: tuple = DEFAULT_BACKGROUND_KINDS
    checkpoint_every: int = 0
    # architecture overrides for a fresh generator when the original field
    # has no weights to clone
    generator_arch: dict | None = None

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.lr_init < 0 or self.lr_final < 0:
            raise ValueError("learning rates must be nonnegative")
        if not self.background_kinds:
            raise ValueError("background_kinds must be nonempty")


@dataclass
class TrainState:
    field_g: MlpField
    step: int = 0
    adam_m: dict = dc_field(default_factory=dict)
    adam_v: dict = dc_field(default_factory=dict)
    tracker: CenterTracker = dc_field(default_factory=CenterTracker)
    rng: np.random.Generator = dc_field(default_factory=np.random.default_rng)
    loss_history: list = dc_field(default_factory=list)


@dataclass(frozen=True)
class TrainResult:
    checkpoint_path: Path
    descriptor: dict
    history: list


def learning_rate(step: int, cfg: TrainConfig) -> float:
    """Exponential decay from lr_init to lr_final across the run."""
    if cfg.lr_init <= 0.0:
        return 0.0
    frac = step / max(cfg.steps, 1)
    return cfg.lr_init * (cfg.lr_final / cfg.lr_init) ** frac


def _trainable(field_g: MlpField):
    return [(n, p) for n, p in field_g.named_parameters() if p.requires_grad]


def _adam_step(state: TrainState, cfg: TrainConfig):
    params = _trainable(state.field_g)
    grads = [p.grad for _, p in params if p.grad is not None]
    if not grads:
        return
    total_norm = torch.sqrt(sum((g.detach() ** 2).sum() for g in grads))
    scale = 1.0
    if cfg.grad_clip > 0 and float(total_norm) > cfg.grad_clip:
        scale = cfg.grad_clip / (float(total_norm) + 1e-12)
    lr = learning_rate(state.step, cfg)
    t = state.step + 1
    bias1 = 1.0 - cfg.beta1 ** t
    bias2 = 1.0 - cfg.beta2 ** t
    with torch.no_grad():
        for name, p in params:
            if p.grad is None:
                continue
            g = p.grad * scale
            m = state.adam_m.get(name)
            v = state.adam_v.get(name)
            if m is None:
                m = torch.zeros_like(p)
                v = torch.zeros_like(p)
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
            state.adam_m[name] = m
            state.adam_v[name] = v
            p -= lr * (m / bias1) / (torch.sqrt(v / bias2) + cfg.adam_eps)


def train_step(
    state: TrainState,
    field_original,
    box: RoiBox,
    scorer,
    caption: str,
    cfg: TrainConfig,
) -> TrainState:
    """One optimization step; mutates and returns the state."""
    rng = state.rng
    afov = math.radians(cfg.afov_deg)
    center = state.tracker.center_or(box.center)
    pose = geometry.sample_pose(cfg.pose, box, afov, center, rng)
    d = float(np.linalg.norm(pose.position - center))
    near, far = geometry.near_far_planes(d, box.diagonal, cfg.min_near)
    settings = RenderSettings(
        near=near, far=far, n_samples=cfg.n_samples, stratified=cfg.stratified
    )
    kind = cfg.background_kinds[state.step % len(cfg.background_kinds)]
    background = renderer.make_background(
        BackgroundSpec(kind=kind), cfg.render_resolution, rng
    )

    if cfg.mode.is_object_blend:
        out, aux = blending.render_roi_blended(
            field_original, state.field_g, box, cfg.mode, pose,
            cfg.render_resolution, settings, background,
            center=center, rng=rng, return_aux=True,
        )
    else:
        out, aux = renderer.render_roi(
            state.field_g, box, pose, cfg.render_resolution, settings,
            background, rng=rng, return_aux=True,
        )

    scored = renderer.upsample_bilinear(out.rgb, scorer.input_resolution)
    prompt = guidance.directional_prompt(caption, pose, cfg.pose.scene_type)
    text_embedding = torch.as_tensor(scorer.embed_text(prompt)).detach()
    l_sim = guidance.similarity_loss(scorer.embed_image(scored), text_embedding)
    l_t = guidance.transmittance_loss(out.mean_transmittance, cfg.loss.tau)
    l_d = guidance.depth_loss(out.disparity, cfg.loss.rho)
    weights = guidance.anneal_weights(state.step, cfg.steps, cfg.loss)
    loss = guidance.total_loss(l_sim, l_t, l_d, weights)

    l_sim_val = float(l_sim.detach())
    l_t_val = float(l_t.detach()) if isinstance(l_t, torch.Tensor) else float(l_t)
    l_d_val = float(l_d.detach()) if isinstance(l_d, torch.Tensor) else float(l_d)
    if not torch.isfinite(loss):
        raise TrainingDiverged(
            f"non-finite loss at step {state.step}",
            diagnostics={
                "step": state.step,
                "pose": pose.to_dict(),
                "l_sim": l_sim_val,
                "l_t": l_t_val,
                "l_d": l_d_val,
            },
        )

    state.field_g.zero_grad(set_to_none=True)
    loss.backward()
    _adam_step(state, cfg)

    for p in state.field_g.parameters():
        if not torch.all(torch.isfinite(p)):
            raise TrainingDiverged(
                f"non-finite parameters after step {state.step}",
                diagnostics={"step": state.step, "pose": pose.to_dict()},
            )

    state.tracker = blending.update_center(state.tracker, aux.positions, aux.densities)
    state.loss_history.append(
        {
            "step": state.step,
            "l_sim": l_sim_val,
            "l_t": l_t_val,
            "l_d": l_d_val,
            "weight_t": weights[0],
            "weight_d": weights[1],
            "total": float(loss.detach()),
            "lr": learning_rate(state.step, cfg),
        }
    )
    state.step += 1
    return state


def _moments_vector(state: TrainState, which: str) -> np.ndarray:
    store = state.adam_m if which == "m" else state.adam_v
    parts = []
    for name, p in state.field_g.named_parameters():
        t = store.get(name)
        if t is None:
            t = torch.zeros_like(p)
        parts.append(t.detach().numpy().astype("<f4", copy=False).ravel())
    return np.concatenate(parts) if parts else np.zeros(0, dtype="<f4")


def save_train_state(state: TrainState, cfg: TrainConfig, path):
    """Serialize everything a resumed run needs, exactly."""
    doc = {
        "format": TRAIN_STATE_FORMAT,
        "version": TRAIN_STATE_VERSION,
        "step": state.step,
        "field": {
            "field": state.field_g.descriptor(),
            "params_b64": fields.encode_f32(fields.flatten_parameters(state.field_g)),
        },
        "adam_m_b64": fields.encode_f32(_moments_vector(state, "m")),
        "adam_v_b64": fields.encode_f32(_moments_vector(state, "v")),
        "rng_state": state.rng.bit_generator.state,
        "tracker": state.tracker.to_dict(),
        "loss_history": state.loss_history,
        "freeze_density": cfg.freeze_density,
    }
    Path(path).write_text(json.dumps(doc))


def load_train_state(path) -> TrainState:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != TRAIN_STATE_FORMAT:
        raise ValueError(f"{path}: not a train-state file")
    field_g = fields.field_from_descriptor(doc["field"]["field"])
    fields.unflatten_parameters(field_g, fields.decode_f32(doc["field"]["params_b64"]))
    if doc.get("freeze_density"):
        fields.apply_parameter_mask(field_g, fields.freeze_density_layers(field_g))

    state = TrainState(field_g=field_g, step=doc["step"])
    for which, key in (("m", "adam_m_b64"), ("v", "adam_v_b64")):
        flat = fields.decode_f32(doc[key])
        store = {}
        offset = 0
        for name, p in field_g.named_parameters():
            n = p.numel()
            chunk = flat[offset : offset + n].reshape(tuple(p.shape))
            store[name] = torch.from_numpy(chunk.astype(np.float32)).to(p.dtype)
            offset += n
        if which == "m":
            state.adam_m = store
        else:
            state.adam_v = store
    state.tracker = CenterTracker.from_dict(doc["tracker"])
    rng = np.random.default_rng()
    rng.bit_generator.state = doc["rng_state"]
    state.rng = rng
    state.loss_history = list(doc["loss_history"])
    return state


def write_history_csv(history: list, path):
    columns = ["step", "l_sim", "l_t", "l_d", "weight_t", "weight_d", "total", "lr"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in history:
            writer.writerow({k: row[k] for k in columns})


def train(
    field_original,
    box: RoiBox,
    caption: str,
    cfg: TrainConfig,
    scorer,
    out_dir,
    scene_id: str = "",
    generator_init: MlpField | None = None,
    resume_from=None,
    progress=None,
) -> TrainResult:
    """Run the full edit optimization and persist its artifacts.

    The generator starts as a clone of the original field when that field is
    trainable, otherwise as a fresh seeded MLP (or `generator_init`). Writes
    the generator checkpoint, the exact-resume train state, the edit
    descriptor, and the loss history CSV into `out_dir`.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if resume_from is not None:
        state = load_train_state(resume_from)
    else:
        if generator_init is not None:
            field_g = generator_init
        elif getattr(field_original, "trainable", False):
            field_g = fields.clone_field(field_original)
        else:
            arch = cfg.generator_arch or {}
            field_g = MlpField(seed=cfg.seed, **arch)
        if cfg.freeze_density:
            fields.apply_parameter_mask(field_g, fields.freeze_density_layers(field_g))
        state = TrainState(
            field_g=field_g,
            tracker=CenterTracker(decay=cfg.ema_decay),
            rng=np.random.default_rng(cfg.seed),
        )

    state_path = out_dir / "train_state.json"
    try:
        while state.step < cfg.steps:
            train_step(state, field_original, box, scorer, caption, cfg)
            if cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
                save_train_state(state, cfg, state_path)
            if progress is not None:
                progress(state)
    except BaseException:
        save_train_state(state, cfg, state_path)
        raise

    save_train_state(state, cfg, state_path)
    ema_center = state.tracker.center_or(box.center)
    checkpoint_path = out_dir / "field_g.json"
    fields.save_checkpoint(
        state.field_g, checkpoint_path, metadata={"ema_center": ema_center.tolist()}
    )
    descriptor = {
        "scene_id": scene_id,
        "box": box.to_dict(),
        "mode": cfg.mode.to_dict(),
        "caption": caption,
        "ema_center": ema_center.tolist(),
        "field_g_checkpoint": checkpoint_path.name,
        "texture_only": cfg.freeze_density,
    }
    (out_dir / "edit.json").write_text(json.dumps(descriptor, indent=2))
    write_history_csv(state.loss_history, out_dir / "history.csv")
    return TrainResult(
        checkpoint_path=checkpoint_path, descriptor=descriptor, history=state.loss_history
    )
