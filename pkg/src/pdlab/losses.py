"""Training objectives on batches of unit joint features.

All losses take ``scale``: a float or a scalar Tensor multiplying the cosine
similarities before the softmax. ``scale=1`` evaluates the contrastive terms
on raw cosine similarity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


@dataclass
class LossConfig:
    lam: float = 0.1
    learnable_scale: bool = True
    init_scale: float = 1 / 0.07
    fixed_scale: float = 1.0
    max_scale: float = 100.0
    num_identities: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.fixed_scale <= 0 or self.init_scale <= 0:
            raise ValueError("temperature scale must be > 0")


def logit_scale(params, cfg: LossConfig):
    """Multiplier on cosine similarities: exp of the learnable log-scale, capped, or a constant."""
    if cfg.learnable_scale and "logit_scale" in params:
        return T.exp(T.clip(params["logit_scale"], -math.inf, math.log(cfg.max_scale)))
    return cfg.fixed_scale


def _check_pair(op, t: Tensor, v: Tensor, ids) -> np.ndarray:
    if t.ndim != 2 or v.ndim != 2 or t.shape != v.shape:
        raise ShapeError(op, t.shape, v.shape)
    ids = np.asarray(ids)
    if ids.shape != (t.shape[0],):
        raise ShapeError(op, t.shape, ids.shape, detail="ids must parallel the batch")
    return ids


def _positive_weights(anchor_ids: np.ndarray, gallery_ids: np.ndarray) -> np.ndarray:
    pos = (anchor_ids[:, None] == gallery_ids[None, :]).astype(np.float64)
    counts = pos.sum(axis=1, keepdims=True)
    if np.any(counts == 0):
        raise ValueError("an anchor has an empty positive set")
    return pos / counts


def _anchor_loss(sim: Tensor, anchor_ids, gallery_ids) -> Tensor:
    logp = T.log_softmax(sim, axis=1)
    w = _positive_weights(np.asarray(anchor_ids), np.asarray(gallery_ids))
    per_anchor = (logp * w).sum(axis=1)
    return -per_anchor.mean()


def l_t2i(text: Tensor, image: Tensor, ids, scale=1.0) -> Tensor:
    """Text anchors ranked against the batch images; positives share the person id."""
    text, image = T.as_tensor(text), T.as_tensor(image)
    ids = _check_pair("l_t2i", text, image, ids)
    return _anchor_loss((text @ image.T) * scale, ids, ids)


def l_i2t(text: Tensor, image: Tensor, ids, scale=1.0) -> Tensor:
    text, image = T.as_tensor(text), T.as_tensor(image)
    ids = _check_pair("l_i2t", text, image, ids)
    return _anchor_loss((image @ text.T) * scale, ids, ids)


def l_itc(text: Tensor, image: Tensor, ids, scale=1.0) -> Tensor:
    text, image = T.as_tensor(text), T.as_tensor(image)
    ids = _check_pair("l_itc", text, image, ids)
    sim = (text @ image.T) * scale
    return _anchor_loss(sim, ids, ids) + _anchor_loss(sim.T, ids, ids)


def id_loss(features: Tensor, ids, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Mean cross-entropy of a linear classifier against hard one-hot identity targets."""
    features = T.as_tensor(features)
    ids = np.asarray(ids)
    if features.ndim != 2 or weight.ndim != 2 or features.shape[1] != weight.shape[0]:
        raise ShapeError("id_loss", features.shape, weight.shape)
    n_cls = weight.shape[1]
    if ids.shape != (features.shape[0],):
        raise ShapeError("id_loss", features.shape, ids.shape, detail="ids must parallel features")
    if np.any(ids < 0) or np.any(ids >= n_cls):
        raise ValueError(f"identity label out of range [0, {n_cls})")
    logits = features @ weight
    if bias is not None:
        logits = logits + bias
    logp = T.log_softmax(logits, axis=1)
    return -logp[np.arange(len(ids)), ids].mean()


def total_loss_stage2(text: Tensor, image: Tensor, ids, weight: Tensor, cfg: LossConfig,
                      scale=1.0, bias: Optional[Tensor] = None, labels=None) -> Tensor:
    """Contrastive term plus ``cfg.lam`` times the shared-classifier ID loss.

    ``labels`` are classifier indices (defaults to ``ids``); text and image
    features pass through the same classifier.
    """
    labels = np.asarray(ids if labels is None else labels)
    itc = l_itc(text, image, ids, scale)
    if cfg.lam == 0:
        return itc
    both = T.concat([T.as_tensor(text), T.as_tensor(image)], axis=0)
    return itc + cfg.lam * id_loss(both, np.concatenate([labels, labels]), weight, bias)


def infonce(text: Tensor, image: Tensor, scale=1.0) -> Tensor:
    """Symmetric cross-entropy with the diagonal as the only positives, summed over both directions."""
    text, image = T.as_tensor(text), T.as_tensor(image)
    if text.ndim != 2 or text.shape != image.shape:
        raise ShapeError("infonce", text.shape, image.shape)
    B = text.shape[0]
    diag = np.arange(B)
    sim = (text @ image.T) * scale
    t2i = -T.log_softmax(sim, axis=1)[diag, diag].mean()
    i2t = -T.log_softmax(sim.T, axis=1)[diag, diag].mean()
    return t2i + i2t
