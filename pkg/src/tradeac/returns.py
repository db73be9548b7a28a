"""Discounted value targets and advantage estimators."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Trajectory:
    """One rollout: aligned per-step records plus a bootstrap value for the
    state after the last step (0 when the episode terminated)."""
    states: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    values: list = field(default_factory=list)
    action_probs: list = field(default_factory=list)
    bootstrap_value: float = 0.0
    initial_recurrent: tuple | None = None

    def __len__(self):
        return len(self.rewards)

    def validate(self):
        T = len(self.rewards)
        if T < 1:
            raise ValueError("empty trajectory")
        for name in ("states", "actions", "values", "action_probs"):
            if len(getattr(self, name)) != T:
                raise ValueError(f"{name} length != rewards length")
        if not all(0.0 < p <= 1.0 for p in self.action_probs):
            raise ValueError("action probabilities must be in (0, 1]")
        if not np.isfinite(self.bootstrap_value):
            raise ValueError("bootstrap value must be finite")


def discounted_returns(rewards, gamma: float, bootstrap: float = 0.0) -> np.ndarray:
    """Backward recursion G <- r_i + gamma * G seeded with the bootstrap."""
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.size == 0:
        raise ValueError("rewards must be non-empty")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    out = np.empty_like(rewards)
    g = float(bootstrap)
    for i in range(rewards.size - 1, -1, -1):
        g = rewards[i] + gamma * g
        out[i] = g
    return out


def advantages(rewards, values, gamma: float, bootstrap: float = 0.0,
               form: str = "multistep") -> np.ndarray:
    """Advantage estimates; `form` is "onestep" (r_t + gamma*V_{t+1} - V_t)
    or "multistep" (discounted return target minus V_t)."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.shape != values.shape:
        raise ValueError(
            f"rewards/values length mismatch: {rewards.shape} vs {values.shape}")
    if form == "multistep":
        return discounted_returns(rewards, gamma, bootstrap) - values
    if form == "onestep":
        next_values = np.append(values[1:], bootstrap)
        return rewards + gamma * next_values - values
    raise ValueError(f"unknown advantage form {form!r}")
