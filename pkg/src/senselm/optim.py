"""AdamW with decoupled weight decay, plus the two stage schedules."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .nn import Parameter


def _decay_exempt(name: str) -> bool:
    # biases and normalization affine terms are never weight-decayed
    leaf = name.rsplit(".", 1)[-1]
    return leaf in ("bias", "gain", "shift")


class AdamW:
    """Decoupled weight decay Adam; frozen parameters are never touched."""

    def __init__(self, named_params: Iterable[tuple[str, Parameter]],
                 lr: float = 1e-3, betas: tuple[float, float] = (0.9, 0.95),
                 eps: float = 1e-8, weight_decay: float = 0.1):
        if not (0.0 < betas[0] < 1.0 and 0.0 < betas[1] < 1.0):
            raise ValueError(f"betas must lie in (0, 1), got {betas}")
        self.params = list(named_params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def zero_grad(self):
        for _, p in self.params:
            p.value.grad = None

    def step(self, lr: Optional[float] = None):
        lr = self.lr if lr is None else lr
        self.step_count += 1
        t = self.step_count
        for name, p in self.params:
            if p.frozen:
                continue
            g = p.value.grad
            if g is None:
                continue
            m = self._m.get(name)
            if m is None:
                m = np.zeros_like(p.value.data)
                self._m[name] = m
                self._v[name] = np.zeros_like(p.value.data)
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            update = lr * m_hat / (np.sqrt(v_hat) + self.eps)
            if self.weight_decay and not _decay_exempt(name):
                update = update + lr * self.weight_decay * p.value.data
            p.value.data = p.value.data - update


@dataclass
class WarmupStepDecay:
    """Stage-1 schedule: linear warmup, then step decays. Unit is the epoch."""

    base_lr: float = 0.1
    warmup: int = 10
    decay_at: tuple[int, ...] = (60, 100)
    decay_factor: float = 0.1
    total: int = 120

    def lr_at(self, epoch: int) -> float:
        if epoch < 0:
            raise ValueError("epoch must be >= 0")
        lr = self.base_lr
        if self.warmup > 0 and epoch < self.warmup:
            lr = self.base_lr * (epoch / self.warmup)
        for boundary in self.decay_at:
            if epoch >= boundary:
                lr *= self.decay_factor
        return lr


@dataclass
class WarmupConstant:
    """Stage-2 schedule: linear warmup to max_lr, constant afterwards."""

    max_lr: float = 2e-5
    warmup: int = 2000

    def lr_at(self, step: int) -> float:
        if step < 0:
            raise ValueError("step must be >= 0")
        if self.warmup > 0 and step < self.warmup:
            return self.max_lr * (step / self.warmup)
        return self.max_lr


def lr_at(schedule, step: int) -> float:
    return schedule.lr_at(step)


@dataclass
class OptimizerConfig:
    beta1: float = 0.9
    beta2: float = 0.95
    weight_decay: float = 0.1
    eps: float = 1e-8

    def build(self, named_params) -> AdamW:
        return AdamW(named_params, betas=(self.beta1, self.beta2),
                     eps=self.eps, weight_decay=self.weight_decay)
