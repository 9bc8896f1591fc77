"""Image-text guidance and the training loss stack.

A scorer embeds images and text into a shared unit-norm space; the
similarity loss is the negated cosine between the two. The bundled
MockScorer is a deterministic stand-in built from a random orthonormal
projection of downsampled pixels, with registered captions mapping to
target-image embeddings, which turns end-to-end optimization into an
image-matching problem with a known optimum. Real scorers plug in through
the same interface, either in-process or over the HTTP adapter protocol.
"""

from __future__ import annotations

import base64
import hashlib
import math
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np
import torch

from .geometry import CameraPose

DIRECTIONAL_SUFFIXES = (
    ", top-down view",
    ", front view",
    ", side view",
    ", back view",
)

TOP_DOWN_ELEVATION_DEG = -60.0  # stricter (more negative) elevations are top-down
FRONT_AZIMUTH_DEG = 45.0        # |azimuth| below this is a front view
SIDE_AZIMUTH_DEG = 135.0        # up to this is a side view, beyond is back


@runtime_checkable
class ScorerInterface(Protocol):
    input_resolution: int

    def embed_image(self, image: torch.Tensor) -> torch.Tensor: ...

    def embed_text(self, text: str) -> torch.Tensor: ...


@dataclass(frozen=True)
class LossConfig:
    """Regularizer thresholds, weights, and the annealing ramp."""

    tau: float = 0.88            # transmittance ceiling
    rho: float = 0.2             # disparity-variance ceiling
    lambda_t: float = 0.25
    lambda_d: float = 4.0
    ramp_start_frac: float = 0.0
    ramp_end_frac: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.lambda_t < 0 or self.lambda_d < 0:
            raise ValueError("loss weights must be nonnegative")
        if not 0.0 <= self.ramp_start_frac <= self.ramp_end_frac <= 1.0:
            raise ValueError("ramp fractions must satisfy 0 <= start <= end <= 1")


def _normalize(v: torch.Tensor) -> torch.Tensor:
    return v / torch.linalg.vector_norm(v)


class MockScorer:
    """Deterministic test scorer.

    Images are bilinearly reduced to a small feature grid, lifted with a
    constant coordinate, and projected through a fixed random orthonormal
    matrix onto the unit sphere. Registered captions embed to their target
    image's embedding (directional suffixes are ignored); unknown text maps
    to a stable hash embedding.
    """

    def __init__(
        self,
        embedding_dim: int = 64,
        feature_size: int = 16,
        seed: int = 0,
        input_resolution: int = 224,
    ):
        self.embedding_dim = embedding_dim
        self.feature_size = feature_size
        self.input_resolution = input_resolution
        self.seed = seed
        n_features = 3 * feature_size * feature_size + 1
        rng = np.random.default_rng(seed)
        gauss = rng.normal(size=(n_features, embedding_dim))
        q, _ = np.linalg.qr(gauss)
        self._projection = torch.from_numpy(q.T.copy())  # (K, F), orthonormal rows
        self._targets: dict[str, torch.Tensor] = {}

    def register(self, caption: str, target_image) -> None:
        """Bind a caption to a goal image; its text embedding becomes the
        image embedding of that target."""
        img = torch.as_tensor(np.asarray(target_image, dtype=np.float64))
        self._targets[caption] = self.embed_image(img).detach()

    def _features(self, image: torch.Tensor) -> torch.Tensor:
        if image.ndim != 3 or image.shape[-1] != 3:
            raise ValueError(f"expected (H, W, 3) image, got {tuple(image.shape)}")
        chw = image.permute(2, 0, 1)[None]
        small = torch.nn.functional.interpolate(
            chw, size=(self.feature_size, self.feature_size),
            mode="bilinear", align_corners=False,
        )
        # centering kills the shared brightness component, so unrelated
        # images score near zero; the constant keeps the vector nonzero
        flat = small.reshape(-1) - 0.5
        one = torch.ones(1, dtype=flat.dtype)
        return torch.cat([flat, one])

    def embed_image(self, image: torch.Tensor) -> torch.Tensor:
        image = torch.as_tensor(image)
        feats = self._features(image)
        proj = self._projection.to(feats.dtype) @ feats
        return _normalize(proj)

    def embed_text(self, text: str) -> torch.Tensor:
        key = strip_directional_suffix(text)
        if key in self._targets:
            return self._targets[key]
        digest = hashlib.sha256(key.encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        v = torch.from_numpy(rng.normal(size=self.embedding_dim))
        return _normalize(v)


def strip_directional_suffix(text: str) -> str:
    for suffix in DIRECTIONAL_SUFFIXES:
        if text.endswith(suffix):
            return text[: -len(suffix)]
    return text


def similarity_loss(image_embedding: torch.Tensor, text_embedding: torch.Tensor):
    """Negated cosine alignment of two unit embeddings."""
    image_embedding = torch.as_tensor(image_embedding)
    text_embedding = torch.as_tensor(text_embedding)
    if image_embedding.shape != text_embedding.shape:
        raise ValueError(
            f"embedding shapes differ: {tuple(image_embedding.shape)} vs "
            f"{tuple(text_embedding.shape)}"
        )
    return -(image_embedding * text_embedding.to(image_embedding.dtype)).sum()


def directional_prompt(caption: str, pose: CameraPose, scene_type: str = "full-orbit") -> str:
    """Append the view-dependent suffix for the pose.

    Steep downward views are top-down; otherwise the azimuth picks front,
    side or back. Forward-facing scenes never use the back suffix.
    """
    if not caption:
        raise ValueError("caption must be nonempty")
    az = pose.azimuth_deg
    el = pose.elevation_deg
    if el < TOP_DOWN_ELEVATION_DEG:
        suffix = DIRECTIONAL_SUFFIXES[0]
    elif abs(az) < FRONT_AZIMUTH_DEG:
        suffix = DIRECTIONAL_SUFFIXES[1]
    elif abs(az) <= SIDE_AZIMUTH_DEG:
        suffix = DIRECTIONAL_SUFFIXES[2]
    else:
        suffix = DIRECTIONAL_SUFFIXES[3]
    if scene_type == "forward-facing" and suffix == DIRECTIONAL_SUFFIXES[3]:
        suffix = DIRECTIONAL_SUFFIXES[2]
    return caption + suffix


def transmittance_loss(mean_transmittance, tau: float):
    """Reward transparency up to the ceiling tau, then saturate."""
    if isinstance(mean_transmittance, torch.Tensor):
        t = mean_transmittance
        tau_t = torch.as_tensor(tau, dtype=t.dtype)
        # interior branch keeps gradient flowing at the kink
        return -torch.where(t <= tau_t, t, tau_t)
    return -min(tau, mean_transmittance)


def depth_loss(disparity_map, rho: float):
    """Reward disparity variance (volume) up to the ceiling rho."""
    if isinstance(disparity_map, torch.Tensor):
        var = disparity_map.var(unbiased=False)
        rho_t = torch.as_tensor(rho, dtype=var.dtype)
        return -torch.where(var <= rho_t, var, rho_t)
    var = float(np.var(np.asarray(disparity_map, dtype=np.float64)))
    return -min(rho, var)


def anneal_weights(step: int, total: int, cfg: LossConfig):
    """Linear ramp of the regularizer weights.

    Zero until the ramp starts, full (lambda_t, lambda_d) from the ramp end
    onward.
    """
    if not 0 <= step <= max(total, 1):
        raise ValueError("step must lie in [0, total]")
    start = cfg.ramp_start_frac * total
    end = cfg.ramp_end_frac * total
    if end <= start:
        ramp = 1.0 if step >= end else 0.0
    else:
        ramp = min(max((step - start) / (end - start), 0.0), 1.0)
    return ramp * cfg.lambda_t, ramp * cfg.lambda_d


def total_loss(l_sim, l_t, l_d, weights):
    """Weighted objective: similarity plus annealed regularizers."""
    w_t, w_d = weights
    return l_sim + w_t * l_t + w_d * l_d


class _HttpEmbedImage(torch.autograd.Function):
    """Autograd bridge for remote image embeddings: the backward pass asks
    the adapter endpoint for a vector-Jacobian product."""

    @staticmethod
    def forward(ctx, image, adapter):
        ctx.adapter = adapter
        ctx.save_for_backward(image)
        emb = adapter._post_embed_image(image.detach().numpy())
        return torch.as_tensor(emb, dtype=image.dtype)

    @staticmethod
    def backward(ctx, grad_output):
        (image,) = ctx.saved_tensors
        grad = ctx.adapter._post_embed_image_vjp(
            image.detach().numpy(), grad_output.detach().numpy()
        )
        return torch.as_tensor(grad, dtype=image.dtype), None


class HttpScorerAdapter:
    """Scorer backed by an external embedding service.

    Protocol (JSON over HTTP):
      POST {base}/embed-image      {"height", "width", "data_b64"} -> {"embedding": [...]}
      POST {base}/embed-text       {"text"} -> {"embedding": [...]}
      POST {base}/embed-image-vjp  {"height", "width", "data_b64",
                                    "cotangent": [...]} -> {"grad_b64": ...}
    Image payloads are little-endian float32 HxWx3 arrays, base64 encoded.
    Training through this scorer requires the vjp endpoint; scoring alone
    does not.
    """

    def __init__(self, base_url: str, input_resolution: int = 224, client=None):
        import httpx

        self.base_url = base_url.rstrip("/")
        self.input_resolution = input_resolution
        self._client = client or httpx.Client(timeout=60.0)

    def _post(self, path: str, payload: dict) -> dict:
        resp = self._client.post(self.base_url + path, json=payload)
        resp.raise_for_status()
        return resp.json()

    @staticmethod
    def _image_payload(image: np.ndarray) -> dict:
        arr = np.ascontiguousarray(image, dtype="<f4")
        return {
            "height": arr.shape[0],
            "width": arr.shape[1],
            "data_b64": base64.b64encode(arr.tobytes()).decode("ascii"),
        }

    def _post_embed_image(self, image: np.ndarray) -> np.ndarray:
        doc = self._post("/embed-image", self._image_payload(image))
        v = np.asarray(doc["embedding"], dtype=np.float64)
        return v / np.linalg.norm(v)

    def _post_embed_image_vjp(self, image: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
        payload = self._image_payload(image)
        payload["cotangent"] = np.asarray(cotangent, dtype=np.float64).tolist()
        doc = self._post("/embed-image-vjp", payload)
        grad = np.frombuffer(base64.b64decode(doc["grad_b64"]), dtype="<f4")
        return grad.reshape(image.shape).astype(np.float64)

    def embed_image(self, image: torch.Tensor) -> torch.Tensor:
        image = torch.as_tensor(image)
        if image.requires_grad:
            return _HttpEmbedImage.apply(image, self)
        emb = self._post_embed_image(image.detach().numpy())
        return torch.as_tensor(emb, dtype=image.dtype)

    def embed_text(self, text: str) -> torch.Tensor:
        doc = self._post("/embed-text", {"text": text})
        v = np.asarray(doc["embedding"], dtype=np.float64)
        return torch.as_tensor(v / np.linalg.norm(v))


def disc_image(
    resolution: int = 32,
    disc_color=(0.9, 0.1, 0.1),
    background=(1.0, 1.0, 1.0),
    radius_frac: float = 0.35,
) -> np.ndarray:
    """A flat disc on a constant background; a convenient optimization
    target for mock-guided runs."""
    ys, xs = np.meshgrid(
        np.linspace(-1.0, 1.0, resolution), np.linspace(-1.0, 1.0, resolution),
        indexing="ij",
    )
    mask = xs * xs + ys * ys <= (2.0 * radius_frac) ** 2
    img = np.where(
        mask[..., None],
        np.asarray(disc_color, dtype=np.float64),
        np.asarray(background, dtype=np.float64),
    )
    return img


def default_mock_target(caption: str, resolution: int = 32) -> np.ndarray:
    """Deterministic per-caption target image for mock-guided training."""
    digest = hashlib.sha256(caption.encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[8:16], "little"))
    color = 0.2 + 0.8 * rng.uniform(size=3)
    bg = 0.2 + 0.8 * rng.uniform(size=3)
    return disc_image(resolution, disc_color=color, background=bg)
