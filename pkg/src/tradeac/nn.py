"""Minimal dense/LSTM/dropout substrate with exact manual backprop.

Everything is float64 numpy. Each layer keeps a stack of forward caches so a
whole rollout can be backpropagated in reverse step order (truncated BPTT at
rollout boundaries).
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when an input does not match a layer's declared shape."""


class BackwardBeforeForward(RuntimeError):
    """Raised when backward is called with no cached forward pass."""


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax; raises on NaN input."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size < 1:
        raise ShapeError("softmax needs at least one logit")
    if np.isnan(logits).any():
        raise ValueError("softmax received NaN logits")
    z = logits - np.max(logits)
    e = np.exp(z)
    return e / e.sum()


class Param:
    """A parameter array paired with its gradient accumulator."""

    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    @property
    def size(self) -> int:
        return self.value.size


class Dense:
    """Fully connected layer y = act(W x + b), act in {identity, tanh}."""

    def __init__(self, in_dim: int, out_dim: int, activation: str = "tanh",
                 rng: np.random.Generator | None = None):
        if activation not in ("identity", "tanh"):
            raise ValueError(f"unknown activation {activation!r}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        if rng is None:
            W = np.zeros((out_dim, in_dim))
        else:
            a = np.sqrt(6.0 / (in_dim + out_dim))
            W = rng.uniform(-a, a, size=(out_dim, in_dim))
        self.W = Param(W)
        self.b = Param(np.zeros(out_dim))
        self._cache: list[tuple[np.ndarray, np.ndarray]] = []

    def params(self):
        return [("W", self.W), ("b", self.b)]

    def param_count(self) -> int:
        return self.out_dim * (self.in_dim + 1)

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.in_dim,):
            raise ShapeError(
                f"dense expected input shape ({self.in_dim},), got {x.shape}")
        y = self.W.value @ x + self.b.value
        if self.activation == "tanh":
            y = np.tanh(y)
        self._cache.append((x, y))
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if not self._cache:
            raise BackwardBeforeForward("dense backward without cached forward")
        x, y = self._cache.pop()
        dz = dy * (1.0 - y * y) if self.activation == "tanh" else dy
        self.W.grad += np.outer(dz, x)
        self.b.grad += dz
        return self.W.value.T @ dz

    def clear_cache(self):
        self._cache.clear()


class Dropout:
    """Inverted dropout: train-time scaling by 1/(1-p), eval is the identity."""

    def __init__(self, p: float):
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p
        self._cache: list[np.ndarray | None] = []

    def params(self):
        return []

    def param_count(self) -> int:
        return 0

    def forward(self, x: np.ndarray, train: bool, rng: np.random.Generator) -> np.ndarray:
        if not train or self.p == 0.0:
            self._cache.append(None)
            return x
        keep = 1.0 - self.p
        mask = (rng.random(x.shape) >= self.p) / keep
        self._cache.append(mask)
        return x * mask

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if not self._cache:
            raise BackwardBeforeForward("dropout backward without cached forward")
        mask = self._cache.pop()
        return dy if mask is None else dy * mask

    def clear_cache(self):
        self._cache.clear()


class LstmCell:
    """Standard LSTM cell (no peepholes), gates stacked [i, f, g, o].

    W: (4h, in), U: (4h, h), b: (4h,). Forget-gate bias initialized to 1.
    Backward walks the cache stack in reverse, carrying (dh, dc) across steps.
    """

    def __init__(self, in_dim: int, hidden: int,
                 rng: np.random.Generator | None = None):
        self.in_dim = in_dim
        self.hidden = hidden
        h = hidden
        if rng is None:
            W = np.zeros((4 * h, in_dim))
            U = np.zeros((4 * h, h))
        else:
            a = np.sqrt(1.0 / h)
            W = rng.uniform(-a, a, size=(4 * h, in_dim))
            U = rng.uniform(-a, a, size=(4 * h, h))
        b = np.zeros(4 * h)
        b[h:2 * h] = 1.0  # forget-gate bias stabilizer
        self.W = Param(W)
        self.U = Param(U)
        self.b = Param(b)
        self._cache: list[tuple] = []

    def params(self):
        return [("W", self.W), ("U", self.U), ("b", self.b)]

    def param_count(self) -> int:
        return 4 * self.hidden * (self.in_dim + self.hidden + 1)

    def forward(self, x: np.ndarray, h_prev: np.ndarray,
                c_prev: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.in_dim,):
            raise ShapeError(
                f"lstm expected input shape ({self.in_dim},), got {x.shape}")
        if h_prev.shape != (self.hidden,) or c_prev.shape != (self.hidden,):
            raise ShapeError("lstm state shape mismatch")
        h = self.hidden
        z = self.W.value @ x + self.U.value @ h_prev + self.b.value
        i = sigmoid(z[:h])
        f = sigmoid(z[h:2 * h])
        g = np.tanh(z[2 * h:3 * h])
        o = sigmoid(z[3 * h:])
        c = f * c_prev + i * g
        h_new = o * np.tanh(c)
        self._cache.append((x, h_prev, c_prev, i, f, g, o, c))
        return h_new, c

    def backward(self, dh: np.ndarray, dc: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Backprop one cached step; returns (dx, dh_prev, dc_prev)."""
        if not self._cache:
            raise BackwardBeforeForward("lstm backward without cached forward")
        x, h_prev, c_prev, i, f, g, o, c = self._cache.pop()
        tc = np.tanh(c)
        do = dh * tc
        dc_total = dc + dh * o * (1.0 - tc * tc)
        di = dc_total * g
        df = dc_total * c_prev
        dg = dc_total * i
        dc_prev = dc_total * f
        dz = np.concatenate([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            dg * (1.0 - g * g),
            do * o * (1.0 - o),
        ])
        self.W.grad += np.outer(dz, x)
        self.U.grad += np.outer(dz, h_prev)
        self.b.grad += dz
        dx = self.W.value.T @ dz
        dh_prev = self.U.value.T @ dz
        return dx, dh_prev, dc_prev

    def clear_cache(self):
        self._cache.clear()


def grad_check(loss_and_grads, registry, eps: float = 1e-5,
               max_checks: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    `loss_and_grads()` must be deterministic (reseed any RNG inside it) and
    return (loss, flat_grads) for the parameters listed in `registry`
    (name, Param pairs, flattened in order). When the parameter count exceeds
    `max_checks`, a random coordinate subset is checked.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    loss0, grads = loss_and_grads()
    if not np.isfinite(loss0):
        raise ValueError("loss is not finite")
    total = sum(p.size for _, p in registry)
    if grads.shape != (total,):
        raise ShapeError(f"expected {total} gradients, got {grads.shape}")

    if max_checks is not None and total > max_checks:
        if rng is None:
            rng = np.random.default_rng(0)
        indices = np.sort(rng.choice(total, size=max_checks, replace=False))
    else:
        indices = np.arange(total)

    flat_views = []
    offset = 0
    for _, p in registry:
        flat_views.append((offset, p.value.reshape(-1)))
        offset += p.size

    def locate(idx):
        for off, view in reversed(flat_views):
            if idx >= off:
                return view, idx - off
        raise IndexError(idx)

    max_err = 0.0
    for idx in indices:
        view, j = locate(idx)
        orig = view[j]
        view[j] = orig + eps
        lp, _ = loss_and_grads()
        view[j] = orig - eps
        lm, _ = loss_and_grads()
        view[j] = orig
        if not (np.isfinite(lp) and np.isfinite(lm)):
            raise ValueError("loss is not finite during perturbation")
        cd = (lp - lm) / (2.0 * eps)
        denom = max(abs(grads[idx]), abs(cd), 1e-8)
        err = abs(grads[idx] - cd) / denom
        if err > max_err:
            max_err = err
    return float(max_err)
