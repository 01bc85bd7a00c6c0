"""Adam and SGD over flat ``name -> ndarray`` parameter dicts, plus a plateau LR schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Adam:
    """Bias-corrected Adam; ``weight_decay`` is decoupled (AdamW style)."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    clip_norm: float | None = None
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict, grads: dict):
        grads = clip_grads(grads, self.clip_norm)
        self.step_count += 1
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        for name in sorted(grads):
            g = grads[name]
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p = params[name]
            if self.weight_decay:
                p -= self.lr * self.weight_decay * p
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        out = {"__opt__.step": np.array([float(self.step_count)])}
        for name in sorted(self.m):
            out[f"__opt__.m.{name}"] = self.m[name]
            out[f"__opt__.v.{name}"] = self.v[name]
        return out

    def load_state(self, arrays: dict):
        self.step_count = int(arrays["__opt__.step"][0])
        self.m = {k[len("__opt__.m."):]: v.copy() for k, v in arrays.items() if k.startswith("__opt__.m.")}
        self.v = {k[len("__opt__.v."):]: v.copy() for k, v in arrays.items() if k.startswith("__opt__.v.")}


@dataclass
class SGD:
    lr: float = 1e-2
    momentum: float = 0.0
    weight_decay: float = 0.0
    clip_norm: float | None = None
    buf: dict = field(default_factory=dict)

    def step(self, params: dict, grads: dict):
        grads = clip_grads(grads, self.clip_norm)
        for name in sorted(grads):
            g = grads[name] + self.weight_decay * params[name]
            if self.momentum:
                b = self.buf.setdefault(name, np.zeros_like(g))
                b *= self.momentum
                b += g
                g = b
            params[name] -= self.lr * g

    def state(self) -> dict:
        return {f"__opt__.buf.{k}": v for k, v in sorted(self.buf.items())}

    def load_state(self, arrays: dict):
        self.buf = {k[len("__opt__.buf."):]: v.copy() for k, v in arrays.items() if k.startswith("__opt__.buf.")}


def clip_grads(grads: dict, max_norm: float | None) -> dict:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``."""
    if max_norm is None:
        return grads
    total = np.sqrt(sum(float(np.sum(g * g)) for _, g in sorted(grads.items())))
    if total <= max_norm or total == 0.0:
        return grads
    s = max_norm / total
    return {k: g * s for k, g in grads.items()}


def make_optimizer(name: str, **kw):
    if name == "adam":
        return Adam(**kw)
    if name == "sgd":
        return SGD(**kw)
    raise ValueError(f"unknown optimizer {name!r}")


@dataclass(frozen=True)
class PlateauSchedule:
    """Multiply the LR by ``factor`` once the last ``patience`` epochs fail to beat the earlier best."""

    factor: float = 0.2
    patience: int = 5
    min_lr: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.factor < 1.0:
            raise ValueError(f"factor must be in [0, 1), got {self.factor}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")

    def next_lr(self, lr: float, history: list, last_reduce: int = 0) -> float:
        """``history`` holds one validation loss per finished epoch.

        ``last_reduce`` is the history length at the previous reduction; a
        full ``patience`` window must elapse after it before decaying again.
        """
        if len(history) - last_reduce < self.patience or len(history) <= self.patience:
            return lr
        if min(history[-self.patience:]) >= min(history[:-self.patience]):
            return max(lr * self.factor, self.min_lr)
        return lr


def plateau_schedule(sched: PlateauSchedule | None, history: list, lr: float, last_reduce: int = 0) -> float:
    if sched is None:
        return lr
    return sched.next_lr(lr, history, last_reduce)
