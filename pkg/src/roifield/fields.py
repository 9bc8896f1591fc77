"""Radiance-field representations.

A field maps (position, view direction) to a raw density and a raw color.
Both outputs are pre-activation: the renderer applies the density
activation and the color sigmoid, and the blending operators manipulate
the raw values directly. Analytic fields provide exact oracles for tests;
the MLP field is the trainable generator.
"""

from __future__ import annotations

import base64
import copy
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .geometry import RoiBox

# Raw density reported outside an analytic field's support. Large enough
# that relu and softplus both map it to exactly zero density.
EMPTY_RAW_DENSITY = -1.0e4

CHECKPOINT_FORMAT = "roifield-checkpoint"
CHECKPOINT_VERSION = 1


def density_activation(name: str):
    """Map activation names to callables. The density activation must send
    large negative raw values to exactly zero."""
    if name == "relu":
        return torch.relu
    if name == "softplus":
        return F.softplus
    raise ValueError(f"unknown density activation {name!r}")


@dataclass(frozen=True)
class FieldSample:
    """Raw (pre-activation) outputs of a field at one point."""

    raw_density: float
    raw_color: np.ndarray

    def __post_init__(self):
        color = np.asarray(self.raw_color, dtype=np.float64)
        object.__setattr__(self, "raw_color", color)
        if not np.isfinite(self.raw_density) or not np.all(np.isfinite(color)):
            raise ValueError("field sample must be finite")


def positional_encode(x: torch.Tensor, num_frequencies: int) -> torch.Tensor:
    """Sinusoidal encoding: per input scalar, [cos(2^l x), sin(2^l x)] for
    l = 0..L-1, interleaved. Output has 2L components per input scalar."""
    if num_frequencies < 0:
        raise ValueError("num_frequencies must be nonnegative")
    x = torch.as_tensor(x)
    batch_shape = x.shape[:-1] if x.ndim else ()
    if num_frequencies == 0:
        return x.new_zeros(batch_shape + (0,))
    scales = 2.0 ** torch.arange(num_frequencies, dtype=x.dtype, device=x.device)
    angles = x[..., None] * scales  # (..., L) per scalar
    enc = torch.stack([torch.cos(angles), torch.sin(angles)], dim=-1)  # (..., L, 2)
    return enc.reshape(batch_shape + (-1,))


class RadianceField:
    """Interface shared by analytic and MLP fields."""

    trainable = False
    activation = "softplus"

    @property
    def dtype(self) -> torch.dtype:
        return torch.float32

    def query(self, positions: torch.Tensor, directions: torch.Tensor):
        """positions, directions: (N, 3) -> (raw_density (N,), raw_color (N, 3))."""
        raise NotImplementedError

    def descriptor(self) -> dict:
        raise NotImplementedError


class MlpField(torch.nn.Module, RadianceField):
    """Trainable field: encoded position through a trunk MLP to a density
    head, with a view-conditioned color branch.

    Parameters are initialized deterministically from `seed` with uniform
    fan-in scaling.
    """

    trainable = True

    def __init__(
        self,
        depth: int = 4,
        width: int = 64,
        l_pos: int = 10,
        l_dir: int = 4,
        activation: str = "softplus",
        hidden_activation: str = "relu",
        seed: int = 123,
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        density_activation(activation)  # validate early
        self._hidden = density_activation(hidden_activation)
        self.depth = depth
        self.width = width
        self.l_pos = l_pos
        self.l_dir = l_dir
        self.activation = activation
        self.hidden_activation = hidden_activation
        self.seed = seed

        pos_dim = 6 * l_pos
        dir_dim = 6 * l_dir
        trunk = [torch.nn.Linear(pos_dim, width)]
        for _ in range(depth - 1):
            trunk.append(torch.nn.Linear(width, width))
        self.trunk = torch.nn.ModuleList(trunk)
        self.density_head = torch.nn.Linear(width, 1)
        self.feature = torch.nn.Linear(width, width)
        self.color_hidden = torch.nn.Linear(width + dir_dim, max(width // 2, 1))
        self.color_out = torch.nn.Linear(max(width // 2, 1), 3)

        self._init_parameters(seed)
        self.to(dtype)

    def _init_parameters(self, seed: int):
        rng = np.random.default_rng(seed)
        for module in self._layer_order():
            fan_in = module.weight.shape[1]
            bound = 1.0 / np.sqrt(max(fan_in, 1))
            w = rng.uniform(-bound, bound, size=tuple(module.weight.shape))
            b = rng.uniform(-bound, bound, size=tuple(module.bias.shape))
            with torch.no_grad():
                module.weight.copy_(torch.from_numpy(w))
                module.bias.copy_(torch.from_numpy(b))

    def _layer_order(self):
        yield from self.trunk
        yield self.density_head
        yield self.feature
        yield self.color_hidden
        yield self.color_out

    @property
    def dtype(self) -> torch.dtype:
        return self.density_head.weight.dtype

    def forward(self, positions: torch.Tensor, directions: torch.Tensor):
        h = positional_encode(positions, self.l_pos)
        for layer in self.trunk:
            h = self._hidden(layer(h))
        raw_density = self.density_head(h).squeeze(-1)
        feat = self.feature(h)
        d_enc = positional_encode(directions, self.l_dir)
        c = self._hidden(self.color_hidden(torch.cat([feat, d_enc], dim=-1)))
        raw_color = self.color_out(c)
        return raw_density, raw_color

    def query(self, positions, directions):
        return self.forward(positions, directions)

    def descriptor(self) -> dict:
        return {
            "kind": "mlp",
            "depth": self.depth,
            "width": self.width,
            "l_pos": self.l_pos,
            "l_dir": self.l_dir,
            "activation": self.activation,
            "hidden_activation": self.hidden_activation,
            "seed": self.seed,
        }

    def parameter_names(self) -> list:
        return [name for name, _ in self.named_parameters()]


class UniformSphereField(RadianceField):
    """Constant raw density and color inside a sphere, empty outside."""

    def __init__(self, center=(0.0, 0.0, 0.0), radius=1.0, raw_density=5.0,
                 raw_color=(0.0, 0.0, 0.0), activation="softplus"):
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.center = np.asarray(center, dtype=np.float64)
        self.radius = float(radius)
        self.raw_density = float(raw_density)
        self.raw_color = np.asarray(raw_color, dtype=np.float64)
        self.activation = activation

    def query(self, positions, directions):
        center = torch.as_tensor(self.center, dtype=positions.dtype)
        inside = ((positions - center) ** 2).sum(dim=-1) <= self.radius ** 2
        sigma = torch.where(
            inside,
            torch.as_tensor(self.raw_density, dtype=positions.dtype),
            torch.as_tensor(EMPTY_RAW_DENSITY, dtype=positions.dtype),
        )
        color = torch.as_tensor(self.raw_color, dtype=positions.dtype).expand(
            positions.shape[0], 3
        )
        return sigma, color

    def descriptor(self) -> dict:
        return {
            "kind": "uniform-sphere",
            "center": self.center.tolist(),
            "radius": self.radius,
            "raw_density": self.raw_density,
            "raw_color": self.raw_color.tolist(),
            "activation": self.activation,
        }


class UniformBoxField(RadianceField):
    """Constant raw density and color inside an axis-aligned box."""

    def __init__(self, center, dims, raw_density=5.0, raw_color=(0.0, 0.0, 0.0),
                 activation="softplus"):
        self.box = RoiBox(center=center, dims=dims)
        self.raw_density = float(raw_density)
        self.raw_color = np.asarray(raw_color, dtype=np.float64)
        self.activation = activation

    def query(self, positions, directions):
        lo = torch.as_tensor(self.box.min_corner, dtype=positions.dtype)
        hi = torch.as_tensor(self.box.max_corner, dtype=positions.dtype)
        inside = ((positions >= lo) & (positions <= hi)).all(dim=-1)
        sigma = torch.where(
            inside,
            torch.as_tensor(self.raw_density, dtype=positions.dtype),
            torch.as_tensor(EMPTY_RAW_DENSITY, dtype=positions.dtype),
        )
        color = torch.as_tensor(self.raw_color, dtype=positions.dtype).expand(
            positions.shape[0], 3
        )
        return sigma, color

    def descriptor(self) -> dict:
        return {
            "kind": "uniform-box",
            "center": self.box.center.tolist(),
            "dims": self.box.dims.tolist(),
            "raw_density": self.raw_density,
            "raw_color": self.raw_color.tolist(),
            "activation": self.activation,
        }


class CheckerField(RadianceField):
    """Alternating occupied/empty cubic cells, optionally clipped to bounds."""

    def __init__(self, cell=1.0, raw_density=5.0, raw_color=(0.0, 0.0, 0.0),
                 bounds=None, activation="softplus"):
        if cell <= 0:
            raise ValueError("cell must be positive")
        self.cell = float(cell)
        self.raw_density = float(raw_density)
        self.raw_color = np.asarray(raw_color, dtype=np.float64)
        self.bounds = None if bounds is None else RoiBox.from_dict(bounds) if isinstance(bounds, dict) else bounds
        self.activation = activation

    def query(self, positions, directions):
        parity = torch.floor(positions / self.cell).sum(dim=-1).long() % 2 == 0
        occupied = parity
        if self.bounds is not None:
            lo = torch.as_tensor(self.bounds.min_corner, dtype=positions.dtype)
            hi = torch.as_tensor(self.bounds.max_corner, dtype=positions.dtype)
            occupied = occupied & ((positions >= lo) & (positions <= hi)).all(dim=-1)
        sigma = torch.where(
            occupied,
            torch.as_tensor(self.raw_density, dtype=positions.dtype),
            torch.as_tensor(EMPTY_RAW_DENSITY, dtype=positions.dtype),
        )
        color = torch.as_tensor(self.raw_color, dtype=positions.dtype).expand(
            positions.shape[0], 3
        )
        return sigma, color

    def descriptor(self) -> dict:
        return {
            "kind": "checker",
            "cell": self.cell,
            "raw_density": self.raw_density,
            "raw_color": self.raw_color.tolist(),
            "bounds": None if self.bounds is None else self.bounds.to_dict(),
            "activation": self.activation,
        }


class BoxMaskedField(RadianceField):
    """Wrap a field so that everything outside a box is empty."""

    def __init__(self, base: RadianceField, box: RoiBox):
        self.base = base
        self.box = box

    @property
    def dtype(self):
        return self.base.dtype

    @property
    def activation(self):
        return self.base.activation

    def query(self, positions, directions):
        sigma, color = self.base.query(positions, directions)
        lo = torch.as_tensor(self.box.min_corner, dtype=positions.dtype)
        hi = torch.as_tensor(self.box.max_corner, dtype=positions.dtype)
        inside = ((positions >= lo) & (positions <= hi)).all(dim=-1)
        sigma = torch.where(
            inside, sigma, torch.as_tensor(EMPTY_RAW_DENSITY, dtype=sigma.dtype)
        )
        return sigma, color

    def descriptor(self) -> dict:
        return {"kind": "box-masked", "box": self.box.to_dict(), "base": self.base.descriptor()}


def field_eval(field: RadianceField, position, direction) -> FieldSample:
    """Evaluate a field at a single point; rejects non-finite input."""
    p = np.asarray(position, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(d))):
        raise ValueError("non-finite field input")
    pos = torch.as_tensor(p, dtype=field.dtype).reshape(1, 3)
    dirs = torch.as_tensor(d, dtype=field.dtype).reshape(1, 3)
    with torch.no_grad():
        sigma, color = field.query(pos, dirs)
    return FieldSample(
        raw_density=float(sigma[0]), raw_color=color[0].numpy().astype(np.float64)
    )


def field_eval_with_gradient(
    field: MlpField,
    positions: torch.Tensor,
    directions: torch.Tensor,
    density_cotangent: torch.Tensor,
    color_cotangent: torch.Tensor,
):
    """Forward pass plus parameter gradients contracted against the given
    upstream cotangents. Returns ((raw_density, raw_color), grads by name)."""
    if not getattr(field, "trainable", False):
        raise TypeError("gradients require a trainable field")
    sigma, color = field.query(positions, directions)
    params = dict(field.named_parameters())
    grads = torch.autograd.grad(
        outputs=(sigma, color),
        inputs=tuple(params.values()),
        grad_outputs=(
            torch.as_tensor(density_cotangent, dtype=sigma.dtype),
            torch.as_tensor(color_cotangent, dtype=color.dtype),
        ),
        allow_unused=True,
    )
    grad_map = {
        name: (g if g is not None else torch.zeros_like(p))
        for (name, p), g in zip(params.items(), grads)
    }
    return (sigma.detach(), color.detach()), grad_map


def clone_field(field: MlpField) -> MlpField:
    """Deep copy of a trainable field; updates to the clone never touch
    the source."""
    if not getattr(field, "trainable", False):
        raise TypeError("only trainable fields can be cloned")
    return copy.deepcopy(field)


def freeze_density_layers(field: MlpField) -> dict:
    """Trainability mask for texture-only edits: the trunk and density head
    freeze, the color branch stays trainable. Covers every parameter."""
    mask = {}
    for name, _ in field.named_parameters():
        trainable = name.startswith(("feature.", "color_hidden.", "color_out."))
        mask[name] = trainable
    return mask


def apply_parameter_mask(field: MlpField, mask: dict):
    for name, param in field.named_parameters():
        param.requires_grad_(bool(mask[name]))


def flatten_parameters(field: MlpField) -> np.ndarray:
    """All parameters as one little-endian float32 vector, in
    named_parameters() order."""
    parts = [
        p.detach().numpy().astype("<f4", copy=False).ravel()
        for _, p in field.named_parameters()
    ]
    return np.concatenate(parts) if parts else np.zeros(0, dtype="<f4")


def unflatten_parameters(field: MlpField, flat: np.ndarray):
    flat = np.asarray(flat, dtype="<f4")
    offset = 0
    with torch.no_grad():
        for _, p in field.named_parameters():
            n = p.numel()
            chunk = flat[offset : offset + n].reshape(tuple(p.shape))
            p.copy_(torch.from_numpy(chunk.astype(np.float32)).to(p.dtype))
            offset += n
    if offset != flat.size:
        raise ValueError(f"parameter vector length {flat.size} != expected {offset}")


def encode_f32(array: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(array, dtype="<f4").tobytes()).decode("ascii")


def decode_f32(payload: str) -> np.ndarray:
    return np.frombuffer(base64.b64decode(payload), dtype="<f4").copy()


def field_from_descriptor(desc: dict) -> RadianceField:
    kind = desc["kind"]
    if kind == "mlp":
        return MlpField(
            depth=desc["depth"],
            width=desc["width"],
            l_pos=desc["l_pos"],
            l_dir=desc["l_dir"],
            activation=desc.get("activation", "softplus"),
            hidden_activation=desc.get("hidden_activation", "relu"),
            seed=desc.get("seed", 123),
        )
    if kind == "uniform-sphere":
        return UniformSphereField(
            center=desc["center"], radius=desc["radius"],
            raw_density=desc["raw_density"], raw_color=desc["raw_color"],
            activation=desc.get("activation", "softplus"),
        )
    if kind == "uniform-box":
        return UniformBoxField(
            center=desc["center"], dims=desc["dims"],
            raw_density=desc["raw_density"], raw_color=desc["raw_color"],
            activation=desc.get("activation", "softplus"),
        )
    if kind == "checker":
        return CheckerField(
            cell=desc["cell"], raw_density=desc["raw_density"],
            raw_color=desc["raw_color"], bounds=desc.get("bounds"),
            activation=desc.get("activation", "softplus"),
        )
    raise ValueError(f"unknown field kind {kind!r}")


def save_checkpoint(field: RadianceField, path, metadata: dict | None = None):
    """Write a field to a versioned JSON container. MLP parameters are a
    base64 little-endian float32 array in named-parameter order."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "field": field.descriptor(),
        "metadata": metadata or {},
    }
    if isinstance(field, MlpField):
        doc["param_shapes"] = [
            [name, list(p.shape)] for name, p in field.named_parameters()
        ]
        doc["params_b64"] = encode_f32(flatten_parameters(field))
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path):
    """Read a field checkpoint; returns (field, metadata)."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a field checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    field = field_from_descriptor(doc["field"])
    if isinstance(field, MlpField):
        unflatten_parameters(field, decode_f32(doc["params_b64"]))
    return field, doc.get("metadata", {})
