"""Finite-difference verification of analytic gradients."""

import numpy as np

from .autodiff import Tensor, no_grad


def gradient_error(fn, arrays, rng, step=1e-3):
    """Relative error between analytic and central-difference gradients.

    ``fn`` maps Tensors to a Tensor. The scalar probed is ``sum(fn(...) * R)``
    for a fixed random ``R``. Every input element is perturbed by ``±step``;
    the error is ``||analytic - numeric|| / max(||analytic||, ||numeric||)``
    over all inputs together.
    """
    arrays = [np.asarray(a, dtype=np.float32) for a in arrays]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*leaves)
    weights = rng.standard_normal(out.shape)
    out.backward(weights)
    analytic = np.concatenate([
        (np.zeros(a.shape) if t.grad is None else t.grad.astype(np.float64)).ravel()
        for a, t in zip(arrays, leaves)])

    def probe(values):
        with no_grad():
            value = fn(*[Tensor(v) for v in values])
        return float(np.sum(value.data.astype(np.float64) * weights))

    numeric = []
    for i, a in enumerate(arrays):
        flat = a.ravel()
        for j in range(flat.size):
            hi, lo = flat.copy(), flat.copy()
            hi[j] += np.float32(step)
            lo[j] -= np.float32(step)
            # divide by the step actually realised after f32 rounding
            realised = float(hi[j]) - float(lo[j])
            values = [b for b in arrays]
            values[i] = hi.reshape(a.shape)
            f_hi = probe(values)
            values[i] = lo.reshape(a.shape)
            numeric.append((f_hi - probe(values)) / realised)
    numeric = np.array(numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-6)
    return float(np.linalg.norm(analytic - numeric) / scale)
