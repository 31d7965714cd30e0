"""Parameter update rules: plain SGD and Adam, with a step-decay LR schedule."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class StepDecaySchedule:
    """lr(k) = base * gamma^floor(k / period).  Pure function of the step index."""

    def __init__(self, base_lr: float, gamma: float = 0.5, period: int | None = None):
        self.base_lr = base_lr
        self.gamma = gamma
        self.period = period

    def __call__(self, step: int) -> float:
        if not self.period:
            return self.base_lr
        return self.base_lr * self.gamma ** (step // self.period)


class Optimizer:
    def __init__(self, params: list[Tensor], schedule: StepDecaySchedule):
        self.params = list(params)
        self.schedule = schedule
        self.step_count = 0

    @property
    def lr(self) -> float:
        return self.schedule(self.step_count)

    def _grads(self) -> list[np.ndarray]:
        grads = []
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ValueError(f"parameter {i} has no gradient; run backward first")
            grads.append(p.grad)
        return grads

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    def step(self) -> None:
        lr = self.lr
        for p, g in zip(self.params, self._grads()):
            p.data -= lr * g
        self.step_count += 1


class Adam(Optimizer):
    def __init__(self, params, schedule, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        super().__init__(params, schedule)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        lr = self.lr
        grads = self._grads()
        t = self.step_count + 1
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        self.step_count += 1


def make_optimizer(kind: str, params, base_lr: float, decay_gamma: float = 0.5,
                   decay_period: int | None = None) -> Optimizer:
    schedule = StepDecaySchedule(base_lr, decay_gamma, decay_period)
    if kind == "adam":
        return Adam(params, schedule)
    if kind == "sgd":
        return SGD(params, schedule)
    raise ValueError(f"unknown optimizer kind {kind!r}")
