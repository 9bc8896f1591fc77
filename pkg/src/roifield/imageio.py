"""Image and array file output.

RGB renders go to 8-bit PNG. Scalar maps (disparity, transmittance) go to
16-bit grayscale PNG for quick viewing plus a raw float32 .npy sidecar that
keeps the exact values.
"""

from __future__ import annotations

import base64
import io
from pathlib import Path

import numpy as np
from PIL import Image


def to_uint8(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    return np.clip(np.floor(rgb * 255.0 + 0.5), 0, 255).astype(np.uint8)


def png_bytes(rgb: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(to_uint8(rgb), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def save_png(rgb: np.ndarray, path):
    Path(path).write_bytes(png_bytes(rgb))


def load_png(path) -> np.ndarray:
    img = Image.open(path).convert("RGB")
    return np.asarray(img, dtype=np.float64) / 255.0


def save_gray16_png(values: np.ndarray, path):
    """Scalar map as 16-bit grayscale, scaled by its max (zero maps stay
    zero). The .npy sidecar carries the unscaled values."""
    arr = np.asarray(values, dtype=np.float64)
    peak = float(arr.max()) if arr.size else 0.0
    scaled = arr / peak if peak > 0 else arr
    u16 = np.clip(np.floor(scaled * 65535.0 + 0.5), 0, 65535).astype(np.uint16)
    Image.fromarray(u16).save(Path(path), format="PNG")


def save_float_sidecar(values: np.ndarray, path):
    np.save(Path(path), np.asarray(values, dtype=np.float32))


def save_scalar_map(values: np.ndarray, stem: Path):
    """Write <stem>.png (16-bit) and <stem>.npy (float32) for a scalar map."""
    stem = str(stem)
    save_gray16_png(values, Path(stem + ".png"))
    save_float_sidecar(values, Path(stem + ".npy"))


def b64_f32(values: np.ndarray) -> str:
    return base64.b64encode(
        np.ascontiguousarray(values, dtype="<f4").tobytes()
    ).decode("ascii")


def b64_png(rgb: np.ndarray) -> str:
    return base64.b64encode(png_bytes(rgb)).decode("ascii")
