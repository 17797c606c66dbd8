"""Learnable prompt vectors: initialization, injection into token sequences,
prompt dropout, and stage-dependent trainability."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .optim import ParamStore
from .tensor import ShapeError, Tensor

TEXT_PREFIX = "prompt.text."
IMAGE_PREFIX = "prompt.image."
PROMPT_PREFIX = "prompt."
CLASSIFIER_PREFIX = "classifier."
TEXT_KEY = TEXT_PREFIX + "vectors"
IMAGE_KEY = IMAGE_PREFIX + "vectors"

STAGES = ("stage1", "stage2", "baseline", "one_stage")


@dataclass
class PromptSet:
    """Text prompts (N_txt, d_text) and image prompts (N_img, d_image).

    The tensors are usually the live ``prompt.*`` entries of a ParamStore, so
    optimizer updates show up here without copying.
    """

    text: Tensor
    image: Tensor
    dropout_p: float = 0.3

    @property
    def n_text(self) -> int:
        return self.text.shape[0]

    @property
    def n_image(self) -> int:
        return self.image.shape[0]

    @classmethod
    def from_params(cls, params: ParamStore, dropout_p: float = 0.3) -> Optional["PromptSet"]:
        if TEXT_KEY not in params:
            return None
        return cls(params[TEXT_KEY], params[IMAGE_KEY], dropout_p)


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def init_prompts(n_text: int, n_image: int, text_width: int, image_width: int,
                 rng: np.random.Generator, dropout_p: float = 0.3) -> PromptSet:
    """Xavier-uniform prompts; a standalone vector uses fan_in = fan_out = width."""
    if n_text < 0 or n_image < 0:
        raise ValueError(f"prompt lengths must be >= 0, got ({n_text}, {n_image})")
    bt = xavier_bound(text_width, text_width)
    bi = xavier_bound(image_width, image_width)
    text = rng.uniform(-bt, bt, size=(n_text, text_width))
    image = rng.uniform(-bi, bi, size=(n_image, image_width))
    return PromptSet(Tensor(text, requires_grad=True), Tensor(image, requires_grad=True), dropout_p)


def add_prompts_to_params(params: ParamStore, prompts: PromptSet) -> PromptSet:
    """Register prompt tensors under ``prompt.text.`` / ``prompt.image.`` and return the live set."""
    for key in (TEXT_KEY, IMAGE_KEY):
        if key in params:
            params.remove(key)
    params.add(TEXT_KEY, prompts.text.data)
    params.add(IMAGE_KEY, prompts.image.data)
    return PromptSet.from_params(params, prompts.dropout_p)


def inject_text(tokens: Tensor, prompts: Optional[Tensor], lengths=None,
                capacity: Optional[int] = None) -> Tensor:
    """Place prompt vectors directly after each sequence's EOS slot.

    ``tokens`` is (L, d) or (B, L, d). For batches ``lengths`` gives the number
    of real tokens per row (EOS at ``length - 1``); padding slots follow the
    prompts, so row ``b`` reads ``tokens[:len_b], prompts, pads``.
    """
    if prompts is None or prompts.shape[0] == 0:
        return tokens
    n_p, d = prompts.shape
    if tokens.shape[-1] != d:
        raise ShapeError("inject_text", tokens.shape, prompts.shape)
    L = tokens.shape[-2]
    if capacity is not None and L + n_p > capacity:
        raise ShapeError("inject_text", tokens.shape, prompts.shape,
                         detail=f"combined length {L + n_p} exceeds capacity {capacity}")
    if tokens.ndim == 2:
        if lengths is not None and int(lengths) != L:
            return inject_text(T.reshape(tokens, (1, L, d)), prompts, [lengths], capacity)[0]
        return T.concat([tokens, prompts], axis=0)
    B = tokens.shape[0]
    if lengths is None:
        lengths = np.full(B, L)
    lengths = np.asarray(lengths)
    combined = T.concat([tokens, T.broadcast_to(prompts, (B, n_p, d))], axis=1)
    idx = np.empty((B, L + n_p), dtype=np.int64)
    for b, n in enumerate(lengths):
        idx[b] = np.concatenate([np.arange(n), L + np.arange(n_p), np.arange(n, L)])
    if np.array_equal(idx, np.broadcast_to(np.arange(L + n_p), idx.shape)):
        return combined
    return combined[np.arange(B)[:, None], idx]


def inject_image(patches: Tensor, prompts: Optional[Tensor], capacity: Optional[int] = None) -> Tensor:
    """Prepend prompt vectors before the CLS slot: prompts, CLS, patches."""
    if prompts is None or prompts.shape[0] == 0:
        return patches
    n_p, d = prompts.shape
    if patches.shape[-1] != d:
        raise ShapeError("inject_image", patches.shape, prompts.shape)
    if capacity is not None and patches.shape[-2] + n_p > capacity:
        raise ShapeError("inject_image", patches.shape, prompts.shape,
                         detail=f"combined length exceeds capacity {capacity}")
    if patches.ndim == 2:
        return T.concat([prompts, patches], axis=0)
    B = patches.shape[0]
    return T.concat([T.broadcast_to(prompts, (B, n_p, d)), patches], axis=1)


def apply_prompt_dropout(prompts: PromptSet, train: bool, rng: np.random.Generator) -> PromptSet:
    """Elementwise inverted dropout on both prompt blocks in train mode; identity otherwise."""
    if not train or prompts.dropout_p == 0.0:
        return prompts
    return PromptSet(T.dropout(prompts.text, prompts.dropout_p, rng),
                     T.dropout(prompts.image, prompts.dropout_p, rng), prompts.dropout_p)


def set_stage_trainability(params: ParamStore, stage: str) -> None:
    """Set trainable flags for a training stage.

    stage1     prompts only
    stage2     everything except prompts (classifier included)
    baseline   every parameter; no prompts may exist
    one_stage  prompts, encoders and classifier together
    """
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}; expected one of {STAGES}")
    has_prompts = TEXT_KEY in params
    if stage in ("stage1", "stage2", "one_stage") and not has_prompts:
        raise ValueError(f"stage {stage!r} needs prompt parameters")
    if stage == "baseline" and has_prompts:
        raise ValueError("baseline runs without prompts")
    for name in params:
        is_prompt = name.startswith(PROMPT_PREFIX)
        if stage == "stage1":
            flag = is_prompt
        elif stage == "stage2":
            flag = not is_prompt
        else:
            flag = True
        params.set_trainable(name, flag)
