"""Parameter storage, Adam with per-group learning-rate multipliers, and the
warmup + cosine learning-rate schedule."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Optional

import numpy as np

from .tensor import Tensor


class ParamStore:
    """Ordered mapping of hierarchical parameter names to leaf tensors.

    Each name carries a trainable flag. The flag also drives ``requires_grad``
    so frozen parameters are not differentiated at all.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._trainable: dict[str, bool] = {}

    def add(self, name: str, value, trainable: bool = True) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64, copy=True), requires_grad=trainable)
        self._params[name] = t
        self._trainable[name] = bool(trainable)
        return t

    def remove(self, name: str) -> None:
        del self._params[name]
        del self._trainable[name]

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._params if n.startswith(prefix)]

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def set_trainable(self, name: str, flag: bool) -> None:
        self._trainable[name] = bool(flag)
        t = self._params[name]
        t.requires_grad = bool(flag)
        if not flag:
            t.grad = None

    def trainable_names(self) -> list[str]:
        return [n for n, f in self._trainable.items() if f]

    def num_scalars(self, trainable_only: bool = False) -> int:
        return sum(t.size for n, t in self._params.items() if self._trainable[n] or not trainable_only)

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def digest(self, prefix: str = "", exclude_prefix: Optional[str] = None) -> str:
        """SHA-256 over names and raw bytes of the selected parameters."""
        h = hashlib.sha256()
        for name, t in self._params.items():
            if not name.startswith(prefix):
                continue
            if exclude_prefix is not None and name.startswith(exclude_prefix):
                continue
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name, t in self._params.items():
            out.add(name, t.data, self._trainable[name])
        return out


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def sync(self, params: ParamStore) -> None:
        """Make the accumulators match the current trainable set exactly."""
        live = set(params.trainable_names())
        for name in list(self.m):
            if name not in live:
                del self.m[name]
                del self.v[name]
        for name in params.trainable_names():
            if name not in self.m:
                self.m[name] = np.zeros_like(params[name].data)
                self.v[name] = np.zeros_like(params[name].data)


class MissingGradError(RuntimeError):
    pass


def group_lr(name: str, lr: float, multipliers: Optional[Mapping[str, float]] = None) -> float:
    """Learning rate for ``name``: ``lr`` times the multiplier of the longest matching prefix."""
    if not multipliers:
        return lr
    best, mult = -1, 1.0
    for prefix, m in multipliers.items():
        if name.startswith(prefix) and len(prefix) > best:
            best, mult = len(prefix), m
    return lr * mult


def adam_step(params: ParamStore, state: AdamState, lr: float,
              multipliers: Optional[Mapping[str, float]] = None) -> None:
    """One bias-corrected Adam update of every trainable parameter, in place.

    Non-trainable parameters are never touched.
    """
    names = params.trainable_names()
    for name in names:
        if params[name].grad is None:
            raise MissingGradError(f"trainable parameter {name!r} has no gradient")
    state.sync(params)
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name in names:
        p = params[name]
        g = p.grad
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        step_lr = group_lr(name, lr, multipliers)
        p.data -= step_lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass
class LrSchedule:
    """Linear warmup from ``warmup_start_lr`` to ``base_lr``, then cosine decay to ``min_lr``."""

    base_lr: float = 1e-5
    warmup_epochs: int = 5
    warmup_start_lr: float = 1e-6
    total_epochs: int = 60
    min_lr: float = 0.0
    classifier_multiplier: float = 5.0

    def __post_init__(self):
        if self.base_lr <= 0 or self.warmup_start_lr <= 0 or self.min_lr < 0:
            raise ValueError("learning rates must be positive (min_lr nonnegative)")
        if not 0 <= self.warmup_epochs <= self.total_epochs:
            raise ValueError("need 0 <= warmup_epochs <= total_epochs")


def lr_at(schedule: LrSchedule, epoch: float) -> float:
    s = schedule
    if not 0 <= epoch <= s.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {s.total_epochs}]")
    if epoch < s.warmup_epochs:
        return s.warmup_start_lr + (s.base_lr - s.warmup_start_lr) * epoch / s.warmup_epochs
    span = s.total_epochs - s.warmup_epochs
    if span == 0:
        return s.base_lr
    frac = (epoch - s.warmup_epochs) / span
    return s.min_lr + 0.5 * (s.base_lr - s.min_lr) * (1.0 + math.cos(math.pi * frac))
