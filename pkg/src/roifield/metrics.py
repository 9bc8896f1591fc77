"""Quantitative evaluation of an edit under any scorer.

Direction similarity compares the embedding shift caused by the edit with
the shift between the two captions; direction consistency averages the
agreement of frame-to-frame embedding deltas between the original and
edited sequences; retrieval precision counts renders whose true caption
ranks first in a caption pool.
"""

from __future__ import annotations

import logging

import numpy as np
import torch

logger = logging.getLogger(__name__)

DELTA_EPS = 1e-9


def _embed(scorer, image) -> np.ndarray:
    img = torch.as_tensor(np.asarray(image, dtype=np.float64))
    return scorer.embed_image(img).detach().numpy().astype(np.float64)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def direction_similarity(scorer, image_original, image_edited,
                         caption_original: str, caption_edited: str) -> float:
    """Cosine between the image-embedding shift and the text-embedding
    shift. Degenerate (zero) shifts are an error, not a NaN."""
    dt = (
        scorer.embed_text(caption_edited).detach().numpy()
        - scorer.embed_text(caption_original).detach().numpy()
    ).astype(np.float64)
    di = _embed(scorer, image_edited) - _embed(scorer, image_original)
    if np.linalg.norm(dt) <= DELTA_EPS or np.linalg.norm(di) <= DELTA_EPS:
        raise ValueError("degenerate embedding delta in direction_similarity")
    return _cosine(dt, di)


def direction_consistency(scorer, frames_original, frames_edited) -> float:
    """Mean cosine between consecutive-frame embedding deltas of the two
    sequences. Degenerate pairs are skipped with a warning; all pairs
    degenerate is an error."""
    if len(frames_original) != len(frames_edited):
        raise ValueError("sequences must have equal length")
    if len(frames_original) < 2:
        raise ValueError("need at least two frames")
    emb_o = [_embed(scorer, f) for f in frames_original]
    emb_e = [_embed(scorer, f) for f in frames_edited]
    scores = []
    skipped = 0
    for i in range(len(emb_o) - 1):
        do = emb_o[i + 1] - emb_o[i]
        de = emb_e[i + 1] - emb_e[i]
        if np.linalg.norm(do) <= DELTA_EPS or np.linalg.norm(de) <= DELTA_EPS:
            skipped += 1
            continue
        scores.append(_cosine(do, de))
    if skipped:
        logger.warning("direction_consistency skipped %d degenerate pairs", skipped)
    if not scores:
        raise ValueError("all frame pairs degenerate in direction_consistency")
    return float(np.mean(scores))


def r_precision(scorer, renders, true_captions, caption_pool) -> float:
    """Fraction of renders whose true caption wins the pool by cosine
    similarity. Ties resolve to the earliest pool entry."""
    if not caption_pool:
        raise ValueError("caption pool is empty")
    if len(renders) != len(true_captions):
        raise ValueError("renders and true_captions must have equal length")
    pool_embeddings = np.stack(
        [scorer.embed_text(c).detach().numpy().astype(np.float64) for c in caption_pool]
    )
    hits = 0
    for image, caption in zip(renders, true_captions):
        try:
            true_index = caption_pool.index(caption)
        except ValueError:
            raise ValueError(f"true caption {caption!r} not in pool") from None
        emb = _embed(scorer, image)
        scores = pool_embeddings @ emb
        if int(np.argmax(scores)) == true_index:
            hits += 1
    return hits / len(renders)


def masked_background_mad(image_original, image_edited, roi_mask) -> float:
    """Mean absolute pixel difference outside the projected ROI; a desk
    stand-in for a perceptual background-preservation metric."""
    a = np.asarray(image_original, dtype=np.float64)
    b = np.asarray(image_edited, dtype=np.float64)
    mask = np.asarray(roi_mask, dtype=bool)
    outside = ~mask
    if not outside.any():
        return 0.0
    return float(np.abs(a[outside] - b[outside]).mean())
