"""Central finite-difference gradient checking."""

import numpy as np

from .tensor import Tensor


def numeric_gradient(fn, inputs, h: float = 1e-5, seed_grad=None):
    """Finite-difference gradient of ``sum(fn(*inputs) * seed_grad)`` for each input."""
    base = fn(*inputs)
    if seed_grad is None:
        seed_grad = np.ones_like(base.data)
    grads = []
    for t in inputs:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            plus = float((fn(*inputs).data * seed_grad).sum())
            flat[i] = orig - h
            minus = float((fn(*inputs).data * seed_grad).sum())
            flat[i] = orig
            gflat[i] = (plus - minus) / (2 * h)
        grads.append(g)
    return grads


def analytic_gradient(fn, inputs, seed_grad=None):
    for t in inputs:
        t.grad = None
    out = fn(*inputs)
    if seed_grad is None:
        seed_grad = np.ones_like(out.data)
    out.backward(seed_grad)
    return [np.zeros_like(t.data) if t.grad is None else t.grad for t in inputs]


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def gradcheck(fn, arrays, h: float = 1e-5, rng=None) -> float:
    """Worst relative error between analytic and numeric gradients over all inputs.

    ``fn`` maps Tensors to a Tensor; the output is contracted with a random
    seed gradient so every output element participates.
    """
    rng = rng or np.random.default_rng(0)
    inputs = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    seed_grad = rng.standard_normal(fn(*inputs).shape)
    analytic = analytic_gradient(fn, inputs, seed_grad)
    numeric = numeric_gradient(fn, inputs, h, seed_grad)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))
