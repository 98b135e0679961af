import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from serlct.tensor import Tensor, no_grad  # noqa: E402


def gradcheck(loss_fn, tensors, h=1e-5, max_coords=None, rng=None):
    """Worst norm-wise relative error between analytic and central-difference gradients.

    ``loss_fn()`` builds a scalar Tensor from ``tensors``. With ``max_coords``
    only that many randomly chosen entries per tensor are perturbed.
    """
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        t.grad = np.zeros_like(t.data)
    loss_fn().backward()
    analytic = [t.grad.copy() for t in tensors]
    num_all, ana_all = [], []
    with no_grad():
        for t, ga in zip(tensors, analytic):
            flat = t.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                idx = rng.choice(flat.size, size=max_coords, replace=False)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + h
                fp = float(loss_fn().data)
                flat[i] = orig - h
                fm = float(loss_fn().data)
                flat[i] = orig
                num_all.append((fp - fm) / (2 * h))
                ana_all.append(ga.reshape(-1)[i])
    num, ana = np.array(num_all), np.array(ana_all)
    denom = max(np.linalg.norm(num), np.linalg.norm(ana), 1e-300)
    return float(np.linalg.norm(num - ana) / denom)


def directional_check(loss_fn, tensors, h=1e-5, rng=None):
    """Relative error of ``grad . d`` against a central difference along a random unit direction ``d``."""
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        t.grad = np.zeros_like(t.data)
    loss_fn().backward()
    dirs = [rng.normal(size=t.shape) for t in tensors]
    norm = np.sqrt(sum(float((d * d).sum()) for d in dirs))
    dirs = [d / norm for d in dirs]
    analytic = sum(float((t.grad * d).sum()) for t, d in zip(tensors, dirs))
    origs = [t.data.copy() for t in tensors]
    with no_grad():
        for t, d, o in zip(tensors, dirs, origs):
            t.data[...] = o + h * d
        fp = float(loss_fn().data)
        for t, d, o in zip(tensors, dirs, origs):
            t.data[...] = o - h * d
        fm = float(loss_fn().data)
        for t, o in zip(tensors, origs):
            t.data[...] = o
    numeric = (fp - fm) / (2 * h)
    return abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-300)


def weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    """Generic scalar probe ``sum(out * W)`` so every output entry matters."""
    return (out * Tensor(weights)).sum()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
