"""Dense numerical primitives shared by the model and training code.

Everything here works on float64 numpy arrays and is a pure function of
its inputs, except :func:`sgd_momentum_step`, which updates parameter and
velocity arrays in place.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict

import numpy as np

from .errors import NonFiniteError, ShapeError

LOG_CLAMP = 1e-300


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def affine(W, x, b):
    """Return ``W @ x + b`` after checking shapes."""
    W = np.asarray(W, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if W.ndim != 2 or x.ndim != 1 or b.ndim != 1 or W.shape[1] != x.shape[0] or W.shape[0] != b.shape[0]:
        raise ShapeError(f"affine: W{W.shape} x{x.shape} b{b.shape} do not align")
    return W @ x + b


def softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size == 0:
        raise ShapeError("softmax of an empty vector")
    e = np.exp(logits - logits.max())
    return e / e.sum()


def cross_entropy(probs, target: int) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= target < probs.shape[0]:
        raise IndexError(f"target {target} outside distribution of size {probs.shape[0]}")
    return float(-np.log(max(probs[target], LOG_CLAMP)))


@dataclass
class OptimizerState:
    """Velocities for classical momentum, keyed like the parameter dict."""

    lr: float = 0.1
    momentum: float = 0.95
    velocity: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")

    @classmethod
    def for_params(cls, params: Dict[str, np.ndarray], lr=0.1, momentum=0.95):
        return cls(lr, momentum, {k: np.zeros_like(v) for k, v in params.items()})


def sgd_momentum_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: OptimizerState):
    """Apply ``v <- mu*v - lr*g; theta <- theta + v`` to every parameter, in place.

    Missing velocity entries are created as zeros. Returns ``(params, state)``.
    """
    if set(grads) != set(params):
        raise ShapeError(f"gradient keys {sorted(grads)} differ from parameter keys {sorted(params)}")
    for name, theta in params.items():
        g = grads[name]
        v = state.velocity.get(name)
        if v is None:
            v = state.velocity[name] = np.zeros_like(theta)
        if g.shape != theta.shape or v.shape != theta.shape:
            raise ShapeError(f"{name}: param {theta.shape}, grad {g.shape}, velocity {v.shape}")
        v *= state.momentum
        v -= state.lr * g
        theta += v
    return params, state


def finite_diff_grad(loss_fn: Callable[[], float], params: Dict[str, np.ndarray] | np.ndarray, eps: float = 1e-5):
    """Central-difference gradient of ``loss_fn`` with respect to ``params``.

    ``loss_fn`` takes no arguments and reads the arrays in ``params``, which
    are perturbed in place one coordinate at a time and restored afterwards.
    ``params`` may be a single array or a dict of arrays; the result has the
    same structure.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if isinstance(params, np.ndarray):
        return _fd_array(loss_fn, params, eps, "param")
    return {name: _fd_array(loss_fn, arr, eps, name) for name, arr in params.items()}


def _fd_array(loss_fn, arr: np.ndarray, eps: float, name: str) -> np.ndarray:
    if not arr.flags.c_contiguous:
        raise ValueError(f"{name} must be C-contiguous to be probed in place")
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)  # view; perturbations reach the caller's array
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        lp = loss_fn()
        flat[i] = orig - eps
        lm = loss_fn()
        flat[i] = orig
        if not (np.isfinite(lp) and np.isfinite(lm)):
            idx = [int(j) for j in np.unravel_index(i, arr.shape)]
            raise NonFiniteError(f"non-finite loss probing {name}{idx}")
        gflat[i] = (lp - lm) / (2.0 * eps)
    return grad


def relative_error(analytic, numeric, floor: float = 1e-6) -> float:
    """Max elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))
