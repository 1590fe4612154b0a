"""Parameter containers shared by the target models and the explainer."""

import copy

import numpy as np

from . import autodiff as ad


def patchify(images, grid):
    """[B, ch, W, W] -> [B, P², ch·C·C], patches in row-major order."""
    images = np.asarray(images, dtype=np.float32)
    B, ch = images.shape[:2]
    P, C = grid.P, grid.C
    x = images.reshape(B, ch, P, C, P, C).transpose(0, 2, 4, 1, 3, 5)
    return np.ascontiguousarray(x.reshape(B, P * P, ch * C * C))


def init_linear(rng, fan_in, fan_out):
    w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))
    return ad.Tensor(w, requires_grad=True), ad.Tensor(np.zeros(fan_out), requires_grad=True)


class Module:
    """Ordered dict of named parameter Tensors."""

    def __init__(self):
        self.params = {}

    def add(self, name, tensor):
        self.params[name] = tensor
        return tensor

    def parameters(self):
        return list(self.params.values())

    def state_dict(self):
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state):
        missing = set(self.params) ^ set(state)
        if missing:
            raise KeyError(f"state dict keys differ: {sorted(missing)}")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise ValueError(f"{k}: shape {v.shape} vs {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=np.float32)
        return self

    def copy(self):
        return copy.deepcopy(self)

    def set_trainable(self, flag):
        for p in self.params.values():
            p.requires_grad = flag
            p.grad = None
        return self

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


def ffn_block(x, w1, b1, w2, b2):
    """Pre-norm residual feed-forward block."""
    return x + (ad.gelu(ad.layer_norm(x) @ w1 + b1) @ w2 + b2)
