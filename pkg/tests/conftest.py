import numpy as np
import pytest

from diffmcc import autodiff as ad


def numeric_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x`` (x is restored afterwards)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max-norm relative error between two gradient arrays."""
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(a - b).max() / scale)


def tape_grad(build, leaves):
    """Gradients of the scalar ``build(*leaves)`` w.r.t. ``leaves``, on a fresh tape."""
    for t in leaves:
        t.grad = None
    with ad.Tape() as tape:
        out = build(*leaves)
    tape.backward(out)
    return out, [t.grad if t.grad is not None else np.zeros_like(t.data) for t in leaves]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
