"""Adam with decoupled weight decay and a warm-up + cosine learning-rate schedule."""

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Schedule:
    """Linear warm-up to ``base_lr`` then cosine decay to zero at ``total_steps``.

    ``total_steps=None`` keeps the rate constant after warm-up.
    """

    base_lr: float = 1e-3
    warmup_ratio: float = 0.05
    total_steps: int | None = None

    def __post_init__(self):
        if self.base_lr < 0 or not 0 <= self.warmup_ratio < 1:
            raise ValueError(f"invalid schedule {self}")
        if self.total_steps is not None and self.total_steps < 0:
            raise ValueError("total_steps must be non-negative")

    @property
    def warmup_steps(self):
        if self.total_steps is None:
            return 0
        return int(math.ceil(self.warmup_ratio * self.total_steps))

    def __call__(self, step):
        warm = self.warmup_steps
        if step < warm:
            return self.base_lr * (step + 1) / warm
        if self.total_steps is None:
            return self.base_lr
        span = max(self.total_steps - warm, 1)
        progress = min((step - warm) / span, 1.0)
        return self.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class OptimizerState:
    schedule: Schedule = field(default_factory=Schedule)
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    skipped: list = field(default_factory=list)


def adam_step(params, grads, state):
    """Apply one AdamW update in place to the arrays in ``params``.

    Returns the learning rate used, or ``None`` when the step was skipped
    because a gradient was non-finite (the skip is recorded in
    ``state.skipped`` and ``state.step`` still advances).
    """
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} params but {len(grads)} grads")
    for p, g in zip(params, grads):
        if g is not None and g.shape != p.shape:
            raise ValueError(f"grad shape {g.shape} does not match param shape {p.shape}")
    if not state.m:
        state.m = [np.zeros(p.shape) for p in params]
        state.v = [np.zeros(p.shape) for p in params]
    lr = state.schedule(state.step)
    if any(g is not None and not np.isfinite(g).all() for g in grads):
        state.skipped.append(state.step)
        state.step += 1
        return None
    t = state.step + 1
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        g = g.astype(np.float64)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        w = p.astype(np.float64)
        p[...] = w - lr * ((m / c1) / (np.sqrt(v / c2) + state.eps) + state.weight_decay * w)
    state.step += 1
    return lr


class Adam:
    """Thin stateful wrapper binding :func:`adam_step` to a list of Tensors."""

    def __init__(self, params, lr=1e-3, warmup_ratio=0.05, total_steps=None, weight_decay=0.05):
        self.params = list(params)
        self.state = OptimizerState(Schedule(lr, warmup_ratio, total_steps), weight_decay)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        return adam_step([p.data for p in self.params], [p.grad for p in self.params], self.state)
