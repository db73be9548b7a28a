"""Actor-critic network construction from a declarative architecture row.

A network is: input[depth*m] -> optional dense(tanh) -> optional dropout ->
optional LSTM -> trunk output, branching into a softmax actor head (3 actions)
and a linear critic head, each with an optional extra tanh hidden layer.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .nn import Dense, Dropout, LstmCell, Param, ShapeError, softmax

N_ACTIONS = 3


@dataclass(frozen=True)
class ArchitectureSpec:
    name: str
    depth: int = 1
    dense: int | None = None
    dropout_p: float | None = None
    lstm: int | None = None
    dense_v: int | None = None
    dense_a: int | None = None
    feature_dim: int = 10

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.feature_dim < 1:
            raise ValueError(f"feature_dim must be >= 1, got {self.feature_dim}")
        for field in ("dense", "lstm", "dense_v", "dense_a"):
            v = getattr(self, field)
            if v is not None and v < 1:
                raise ValueError(f"{field} must be positive, got {v}")
        if self.dropout_p is not None and not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")

    @property
    def input_dim(self) -> int:
        return self.depth * self.feature_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureSpec":
        return cls(**d)


# The named architecture menu: depth, dense, dropout, lstm, dense_v, dense_a.
NAMED_SPECS = {
    "5": dict(depth=6, dropout_p=0.5, lstm=64),
    "8": dict(depth=6, dropout_p=0.5, lstm=128),
    "5coolV": dict(depth=6, dropout_p=0.5, lstm=64, dense_v=32),
    "9": dict(depth=1, dropout_p=0.5, lstm=64, dense_v=32),
    "12": dict(depth=1, dropout_p=0.5, lstm=64, dense_v=32, dense_a=32),
    "5noLSTM": dict(depth=20),
    "6": dict(depth=6, dense=128, lstm=128),
}


def named_spec(name: str, feature_dim: int = 10) -> ArchitectureSpec:
    if name not in NAMED_SPECS:
        raise KeyError(f"unknown architecture name {name!r}; "
                       f"known: {sorted(NAMED_SPECS)}")
    return ArchitectureSpec(name=name, feature_dim=feature_dim, **NAMED_SPECS[name])


class ActorCriticNet:
    """Shared-trunk actor-critic network with a deterministic parameter registry."""

    def __init__(self, spec: ArchitectureSpec, rng_seed: int = 0):
        self.spec = spec
        self.rng = np.random.default_rng(rng_seed)
        init = np.random.default_rng(rng_seed)

        dim = spec.input_dim
        self.trunk_dense = None
        self.dropout = None
        self.lstm = None
        if spec.dense:
            self.trunk_dense = Dense(dim, spec.dense, "tanh", init)
            dim = spec.dense
        if spec.dropout_p:
            self.dropout = Dropout(spec.dropout_p)
        if spec.lstm:
            self.lstm = LstmCell(dim, spec.lstm, init)
            dim = spec.lstm
        self.trunk_out_dim = dim

        self.actor_hidden = Dense(dim, spec.dense_a, "tanh", init) if spec.dense_a else None
        self.actor_out = Dense(spec.dense_a or dim, N_ACTIONS, "identity", init)
        self.critic_hidden = Dense(dim, spec.dense_v, "tanh", init) if spec.dense_v else None
        self.critic_out = Dense(spec.dense_v or dim, 1, "identity", init)

        self.h = np.zeros(spec.lstm) if spec.lstm else None
        self.c = np.zeros(spec.lstm) if spec.lstm else None
        # per-step recurrent state snapshots, for reverse-order BPTT bookkeeping
        self._n_cached = 0

    # -- parameter registry ------------------------------------------------

    def registry(self) -> list[tuple[str, Param]]:
        """Named parameters in a deterministic order (checkpoint contract)."""
        out = []
        for prefix, layer in [("trunk_dense", self.trunk_dense),
                              ("lstm", self.lstm),
                              ("actor_hidden", self.actor_hidden),
                              ("actor_out", self.actor_out),
                              ("critic_hidden", self.critic_hidden),
                              ("critic_out", self.critic_out)]:
            if layer is None:
                continue
            for pname, p in layer.params():
                out.append((f"{prefix}.{pname}", p))
        return out

    def param_count(self) -> int:
        return sum(p.size for _, p in self.registry())

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.value.reshape(-1) for _, p in self.registry()])

    def set_flat(self, theta: np.ndarray):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.size != self.param_count():
            raise ShapeError(
                f"expected {self.param_count()} parameters, got {theta.size}")
        off = 0
        for _, p in self.registry():
            p.value[...] = theta[off:off + p.size].reshape(p.value.shape)
            off += p.size

    def zero_grads(self):
        for _, p in self.registry():
            p.grad[...] = 0.0

    def flat_grads(self) -> np.ndarray:
        return np.concatenate([p.grad.reshape(-1) for _, p in self.registry()])

    def set_all_zero(self):
        for _, p in self.registry():
            p.value[...] = 0.0

    # -- recurrent state ---------------------------------------------------

    def reset_recurrent(self):
        if self.lstm is not None:
            self.h[...] = 0.0
            self.c[...] = 0.0

    def get_recurrent(self):
        if self.lstm is None:
            return None
        return self.h.copy(), self.c.copy()

    def set_recurrent(self, state):
        if self.lstm is None:
            return
        if state is None:
            self.reset_recurrent()
        else:
            self.h[...] = state[0]
            self.c[...] = state[1]

    # -- forward / backward ------------------------------------------------

    def forward(self, state: np.ndarray, train: bool = False):
        """One step; returns (policy over 3 actions, scalar value).

        In train mode dropout is active and forward caches accumulate for a
        later sequence backward. Eval mode caches nothing.
        """
        x = np.asarray(state, dtype=np.float64)
        if x.shape != (self.spec.input_dim,):
            raise ShapeError(
                f"expected state shape ({self.spec.input_dim},), got {x.shape}")
        if self.trunk_dense is not None:
            x = self.trunk_dense.forward(x)
        if self.dropout is not None:
            x = self.dropout.forward(x, train, self.rng)
        if self.lstm is not None:
            self.h, self.c = self.lstm.forward(x, self.h, self.c)
            x = self.h
        a = self.actor_hidden.forward(x) if self.actor_hidden else x
        logits = self.actor_out.forward(a)
        v = self.critic_hidden.forward(x) if self.critic_hidden else x
        value = self.critic_out.forward(v)[0]
        if train:
            self._n_cached += 1
        else:
            self.clear_caches()
        return softmax(logits), value

    def backward_sequence(self, dlogits_seq, dvalue_seq):
        """Backprop a run of cached train-mode forwards, newest first inputs
        given oldest first: dlogits_seq[t], dvalue_seq[t] for t = 0..T-1.

        Gradients accumulate into the registry. BPTT is truncated at the start
        of the cached run (no gradient into the pre-rollout recurrent state).
        """
        T = len(dlogits_seq)
        if T != self._n_cached:
            raise ValueError(
                f"{self._n_cached} cached steps but {T} cotangents given")
        dh = np.zeros(self.spec.lstm) if self.lstm is not None else None
        dc = np.zeros(self.spec.lstm) if self.lstm is not None else None
        for t in range(T - 1, -1, -1):
            dv = self.critic_out.backward(np.array([dvalue_seq[t]]))
            if self.critic_hidden is not None:
                dv = self.critic_hidden.backward(dv)
            da = self.actor_out.backward(np.asarray(dlogits_seq[t], dtype=np.float64))
            if self.actor_hidden is not None:
                da = self.actor_hidden.backward(da)
            dx = da + dv
            if self.lstm is not None:
                dx, dh, dc = self.lstm.backward(dx + dh, dc)
            if self.dropout is not None:
                dx = self.dropout.backward(dx)
            if self.trunk_dense is not None:
                self.trunk_dense.backward(dx)
        self._n_cached = 0

    def clear_caches(self):
        for layer in (self.trunk_dense, self.dropout, self.lstm,
                      self.actor_hidden, self.actor_out,
                      self.critic_hidden, self.critic_out):
            if layer is not None:
                layer.clear_cache()
        self._n_cached = 0


def param_count(spec: ArchitectureSpec) -> int:
    """Exact parameter total from the per-layer formulas, without building."""
    total = 0
    dim = spec.input_dim
    if spec.dense:
        total += spec.dense * (dim + 1)
        dim = spec.dense
    if spec.lstm:
        total += 4 * spec.lstm * (dim + spec.lstm + 1)
        dim = spec.lstm
    a_in = dim
    if spec.dense_a:
        total += spec.dense_a * (a_in + 1)
        a_in = spec.dense_a
    total += N_ACTIONS * (a_in + 1)
    v_in = dim
    if spec.dense_v:
        total += spec.dense_v * (v_in + 1)
        v_in = spec.dense_v
    total += 1 * (v_in + 1)
    return total
