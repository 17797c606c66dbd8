"""Miniature CLIP-style dual encoder.

Word-level tokenizer, pre-LN transformer text and image towers, and bias-free
projections into a shared, L2-normalized joint space. Attention is
bidirectional unless ``EncoderConfig.causal_text`` is set.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .optim import ParamStore
from .prompts import PromptSet, inject_image, inject_text
from .tensor import ShapeError, Tensor

SOS, EOS, PAD, UNK = "[SOS]", "[EOS]", "[PAD]", "[UNK]"
RESERVED = (PAD, SOS, EOS, UNK)
_NEG = -1e9


class Vocabulary:
    """Bijective token <-> id map with reserved ids 0..3 for PAD, SOS, EOS, UNK."""

    def __init__(self, words: Sequence[str] = ()):
        self.token_to_id: dict[str, int] = {}
        for tok in RESERVED:
            self._add(tok)
        for w in sorted(set(words) - set(RESERVED)):
            self._add(w)
        self.id_to_token = {i: t for t, i in self.token_to_id.items()}

    def _add(self, tok: str) -> None:
        if tok not in self.token_to_id:
            self.token_to_id[tok] = len(self.token_to_id)

    def __len__(self) -> int:
        return len(self.token_to_id)

    def __contains__(self, tok: str) -> bool:
        return tok in self.token_to_id

    def __getitem__(self, tok: str) -> int:
        return self.token_to_id.get(tok, self.token_to_id[UNK])

    @property
    def sos_id(self) -> int:
        return self.token_to_id[SOS]

    @property
    def eos_id(self) -> int:
        return self.token_to_id[EOS]

    @property
    def pad_id(self) -> int:
        return self.token_to_id[PAD]

    @property
    def unk_id(self) -> int:
        return self.token_to_id[UNK]

    def to_json(self) -> str:
        return json.dumps(self.token_to_id, indent=1, sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        mapping = json.loads(text)
        if len(set(mapping.values())) != len(mapping):
            raise ValueError("vocabulary ids are not unique")
        vocab = cls.__new__(cls)
        vocab.token_to_id = {k: int(v) for k, v in mapping.items()}
        missing = [t for t in RESERVED if t not in vocab.token_to_id]
        if missing:
            raise ValueError(f"vocabulary lacks reserved tokens {missing}")
        vocab.id_to_token = {i: t for t, i in vocab.token_to_id.items()}
        return vocab

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_json(Path(path).read_text())


def normalize_caption(caption: str) -> list[str]:
    return caption.lower().split()


def tokenize(caption: str, vocab: Vocabulary, max_len: int = 32) -> list[int]:
    """``[SOS] w1 .. wn [EOS]``, truncating words so the result has at most ``max_len`` ids."""
    words = normalize_caption(caption)
    if not words:
        raise ValueError("cannot tokenize an empty caption")
    if max_len < 3:
        raise ValueError("max_len must leave room for SOS, one word and EOS")
    words = words[: max_len - 2]
    return [vocab.sos_id] + [vocab[w] for w in words] + [vocab.eos_id]


def pad_batch(seqs: Sequence[Sequence[int]], pad_id: int) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    ids = np.full((len(seqs), int(lengths.max())), pad_id, dtype=np.int64)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
    return ids, lengths


def patchify(image: np.ndarray, patch: int) -> np.ndarray:
    """(H, W, C) -> (N, P*P*C) with patches in row-major order; batched (B, H, W, C) also accepted."""
    image = np.asarray(image)
    batched = image.ndim == 4
    if not batched:
        image = image[None]
    B, H, W, C = image.shape
    if H % patch or W % patch:
        raise ValueError(f"image {H}x{W} is not divisible by patch size {patch}")
    gh, gw = H // patch, W // patch
    out = image.reshape(B, gh, patch, gw, patch, C).transpose(0, 1, 3, 2, 4, 5)
    out = out.reshape(B, gh * gw, patch * patch * C)
    return out if batched else out[0]


def unpatchify(patches: np.ndarray, H: int, W: int, C: int, patch: int) -> np.ndarray:
    patches = np.asarray(patches)
    batched = patches.ndim == 3
    if not batched:
        patches = patches[None]
    B = patches.shape[0]
    gh, gw = H // patch, W // patch
    out = patches.reshape(B, gh, gw, patch, patch, C).transpose(0, 1, 3, 2, 4, 5).reshape(B, H, W, C)
    return out if batched else out[0]


@dataclass
class EncoderConfig:
    layers: int = 4
    text_width: int = 64
    image_width: int = 64
    heads: int = 4
    joint_dim: int = 32
    max_len: int = 32
    image_h: int = 32
    image_w: int = 16
    channels: int = 3
    patch: int = 8
    mlp_ratio: int = 4
    causal_text: bool = False
    max_prompts: int = 32

    def __post_init__(self):
        if self.text_width % self.heads or self.image_width % self.heads:
            raise ValueError("encoder widths must be divisible by heads")
        if self.image_h % self.patch or self.image_w % self.patch:
            raise ValueError("image dims must be divisible by the patch size")

    @property
    def num_patches(self) -> int:
        return (self.image_h // self.patch) * (self.image_w // self.patch)

    @property
    def patch_dim(self) -> int:
        return self.patch * self.patch * self.channels

    def to_dict(self) -> dict:
        return asdict(self)


def _xavier(rng, fan_in, fan_out):
    b = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-b, b, size=(fan_in, fan_out))


def _add_tower(params: ParamStore, prefix: str, width: int, cfg: EncoderConfig, rng) -> None:
    hidden = width * cfg.mlp_ratio
    for i in range(cfg.layers):
        p = f"{prefix}.blocks.{i}."
        params.add(p + "ln_1.weight", np.ones(width))
        params.add(p + "ln_1.bias", np.zeros(width))
        params.add(p + "attn.in_proj_weight", _xavier(rng, width, 3 * width))
        params.add(p + "attn.in_proj_bias", np.zeros(3 * width))
        params.add(p + "attn.out_proj_weight", _xavier(rng, width, width))
        params.add(p + "attn.out_proj_bias", np.zeros(width))
        params.add(p + "ln_2.weight", np.ones(width))
        params.add(p + "ln_2.bias", np.zeros(width))
        params.add(p + "mlp.fc_weight", _xavier(rng, width, hidden))
        params.add(p + "mlp.fc_bias", np.zeros(hidden))
        params.add(p + "mlp.proj_weight", _xavier(rng, hidden, width))
        params.add(p + "mlp.proj_bias", np.zeros(width))


def init_encoder_params(cfg: EncoderConfig, vocab_size: int, seed: int = 0) -> ParamStore:
    rng = np.random.default_rng(seed)
    params = ParamStore()
    dt, di = cfg.text_width, cfg.image_width
    params.add("text.token_embedding", rng.normal(0, 0.02, (vocab_size, dt)))
    params.add("text.positional_embedding", rng.normal(0, 0.01, (cfg.max_len, dt)))
    _add_tower(params, "text", dt, cfg, rng)
    params.add("text.ln_final.weight", np.ones(dt))
    params.add("text.ln_final.bias", np.zeros(dt))
    params.add("text.projection", rng.normal(0, dt ** -0.5, (dt, cfg.joint_dim)))

    params.add("image.patch_embedding", _xavier(rng, cfg.patch_dim, di))
    params.add("image.class_embedding", rng.normal(0, di ** -0.5, di))
    params.add("image.positional_embedding", rng.normal(0, 0.01, (cfg.num_patches + 1, di)))
    _add_tower(params, "image", di, cfg, rng)
    params.add("image.ln_post.weight", np.ones(di))
    params.add("image.ln_post.bias", np.zeros(di))
    params.add("image.projection", rng.normal(0, di ** -0.5, (di, cfg.joint_dim)))

    params.add("logit_scale", np.array(math.log(1 / 0.07)))
    return params


def _attention(x: Tensor, params: ParamStore, p: str, heads: int, mask: Optional[np.ndarray]) -> Tensor:
    B, L, d = x.shape
    dh = d // heads
    qkv = x @ params[p + "in_proj_weight"] + params[p + "in_proj_bias"]
    qkv = T.transpose(qkv.reshape(B, L, 3, heads, dh), (2, 0, 3, 1, 4))
    q, k, v = qkv[0], qkv[1], qkv[2]
    scores = (q @ T.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(dh))
    if mask is not None:
        scores = scores + mask
    att = T.softmax(scores, axis=-1)
    out = T.transpose(att @ v, (0, 2, 1, 3)).reshape(B, L, d)
    return out @ params[p + "out_proj_weight"] + params[p + "out_proj_bias"]


def run_tower(x: Tensor, params: ParamStore, prefix: str, cfg: EncoderConfig,
              mask: Optional[np.ndarray] = None) -> Tensor:
    """Stack of pre-LN transformer blocks; ``mask`` is additive, broadcast to (B, H, L, L)."""
    for i in range(cfg.layers):
        p = f"{prefix}.blocks.{i}."
        h = T.layer_norm(x, params[p + "ln_1.weight"], params[p + "ln_1.bias"])
        x = x + _attention(h, params, p + "attn.", cfg.heads, mask)
        h = T.layer_norm(x, params[p + "ln_2.weight"], params[p + "ln_2.bias"])
        h = T.gelu(h @ params[p + "mlp.fc_weight"] + params[p + "mlp.fc_bias"])
        x = x + (h @ params[p + "mlp.proj_weight"] + params[p + "mlp.proj_bias"])
    return x


def encode_text(ids, params: ParamStore, cfg: EncoderConfig, prompts: Optional[PromptSet] = None,
                lengths=None) -> tuple[Tensor, Tensor]:
    """Encode a (B, L) id batch (or a single id list) to (states, unit joint features).

    ``lengths`` gives real-token counts per row; EOS sits at ``length - 1`` and
    padding beyond it is masked out of attention.
    """
    ids = np.asarray(ids, dtype=np.int64)
    single = ids.ndim == 1
    if single:
        ids = ids[None]
    B, L = ids.shape
    if L > cfg.max_len:
        raise ShapeError("encode_text", (B, L), params["text.positional_embedding"].shape,
                         detail="sequence longer than positional table")
    lengths = np.full(B, L) if lengths is None else np.asarray(lengths, dtype=np.int64).reshape(B)
    x = params["text.token_embedding"][ids] + params["text.positional_embedding"][:L]
    n_p = 0 if prompts is None else prompts.n_text
    if n_p:
        x = inject_text(x, prompts.text, lengths, capacity=cfg.max_len + cfg.max_prompts)
    total = L + n_p
    valid = np.arange(total)[None, :] < (lengths + n_p)[:, None]
    mask = np.where(valid, 0.0, _NEG)[:, None, None, :]
    if cfg.causal_text:
        mask = mask + np.triu(np.full((total, total), _NEG), k=1)[None, None]
    states = run_tower(x, params, "text", cfg, mask)
    states = T.layer_norm(states, params["text.ln_final.weight"], params["text.ln_final.bias"])
    eos = states[np.arange(B), lengths - 1]
    feat = T.l2_normalize(eos @ params["text.projection"])
    if single:
        return states[0], feat[0]
    return states, feat


def encode_image(patches, params: ParamStore, cfg: EncoderConfig,
                 prompts: Optional[PromptSet] = None) -> tuple[Tensor, Tensor]:
    """Encode (B, N, P*P*C) patch batches (or one (N, P*P*C) grid); the CLS state is the feature."""
    patches = np.asarray(patches, dtype=np.float64)
    single = patches.ndim == 2
    if single:
        patches = patches[None]
    B, N, pd = patches.shape
    W = params["image.patch_embedding"]
    if pd != W.shape[0]:
        raise ShapeError("encode_image", patches.shape, W.shape, detail="patch vector length")
    pos = params["image.positional_embedding"]
    if N + 1 > pos.shape[0]:
        raise ShapeError("encode_image", patches.shape, pos.shape, detail="more patches than positions")
    x = Tensor(patches) @ W + pos[1:N + 1]
    cls = (params["image.class_embedding"] + pos[0]).reshape(1, 1, -1)
    x = T.concat([T.broadcast_to(cls, (B, 1, W.shape[1])), x], axis=1)
    n_p = 0 if prompts is None else prompts.n_image
    if n_p:
        x = inject_image(x, prompts.image)
    states = run_tower(x, params, "image", cfg, None)
    states = T.layer_norm(states, params["image.ln_post.weight"], params["image.ln_post.bias"])
    feat = T.l2_normalize(states[:, n_p] @ params["image.projection"])
    if single:
        return states[0], feat[0]
    return states, feat


def similarity_matrix(text_feats, image_feats) -> np.ndarray:
    """Dot products of unit joint features: entry (i, j) is cos(text_i, image_j)."""
    t = np.asarray(text_feats.data if isinstance(text_feats, Tensor) else text_feats, dtype=np.float64)
    v = np.asarray(image_feats.data if isinstance(image_feats, Tensor) else image_feats, dtype=np.float64)
    t, v = np.atleast_2d(t), np.atleast_2d(v)
    if t.shape[1] != v.shape[1]:
        raise ShapeError("similarity_matrix", t.shape, v.shape)
    return t @ v.T
