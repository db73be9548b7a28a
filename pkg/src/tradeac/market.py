"""Minute-bar trading MDP: states, desired-position actions, rewards.

Actions are the desired position in {-1, 0, 1}. Fills happen at the current
bar close with no slippage. The portfolio value c is the gross mark-to-market
(cash + position * close, commission NOT deducted); commission is accumulated
separately so both the training reward and the economic metrics can charge
it explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

ACTIONS = (-1, 0, 1)
MINUTES_PER_DAY = 1440


@dataclass(frozen=True)
class Bar:
    timestamp: int  # epoch minutes
    open: float
    high: float
    low: float
    close: float
    volume: float

    def __post_init__(self):
        lo, hi = self.low, self.high
        if not (lo <= min(self.open, self.close) <= max(self.open, self.close) <= hi):
            raise ValueError(f"bar OHLC ordering violated at t={self.timestamp}")
        if min(self.open, self.high, self.low, self.close) <= 0:
            raise ValueError(f"nonpositive price at t={self.timestamp}")
        if self.volume < 0:
            raise ValueError(f"negative volume at t={self.timestamp}")


@dataclass(frozen=True)
class FeatureConfig:
    """Per-minute feature vector layout; m = 6 + n_lags.

    Features: log-return (scaled), (high-low)/close, (close-open)/close,
    volume z-score over a trailing window, sin/cos of minute-of-day, and
    n_lags extra lagged log-returns.
    """
    depth: int = 6
    n_lags: int = 4
    vol_window: int = 60
    return_scale: float = 100.0

    @property
    def m(self) -> int:
        return 6 + self.n_lags

    @property
    def input_dim(self) -> int:
        return self.depth * self.m

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureConfig":
        return cls(**d)


@dataclass
class EnvConfig:
    fee_per_operation: float = 1.25
    train_fee_multiplier: float = 1.0
    repetition_penalty: float = 0.0   # rubles per step beyond the grace window
    repetition_grace: int = 60
    episode_length: int = 200
    start_capital: float = 0.0
    features: FeatureConfig = field(default_factory=FeatureConfig)

    def __post_init__(self):
        if self.fee_per_operation < 0 or self.repetition_penalty < 0:
            raise ValueError("fees and penalties must be nonnegative")
        if self.train_fee_multiplier < 1.0:
            raise ValueError("train_fee_multiplier must be >= 1")
        if self.episode_length < 1:
            raise ValueError("episode_length must be >= 1")


def portfolio_value(cash: float, position: int, price: float) -> float:
    if price <= 0:
        raise ValueError(f"price must be positive, got {price}")
    return cash + position * price


def compute_reward(c_t: float, c_prev: float, a_t: int, a_prev: int,
                   run_length: int, cfg: EnvConfig) -> float:
    """Portfolio change minus commission on position change, minus the
    linear repetition penalty beyond the grace window."""
    ops = abs(a_t - a_prev)
    fee = cfg.fee_per_operation * cfg.train_fee_multiplier * ops
    penalty = cfg.repetition_penalty * max(0, run_length - cfg.repetition_grace)
    return (c_t - c_prev) - fee - penalty


def _log_returns(closes: np.ndarray) -> np.ndarray:
    lr = np.zeros(len(closes))
    lr[1:] = np.log(closes[1:] / closes[:-1])
    return lr


def make_state(bars, cursor: int, cfg: FeatureConfig) -> np.ndarray:
    """Concatenated per-minute feature vectors for the last `depth` minutes,
    oldest first; minutes before the series start are zero-padded."""
    if cursor < 0 or cursor >= len(bars):
        raise IndexError(f"cursor {cursor} outside series of length {len(bars)}")
    out = np.zeros(cfg.input_dim)
    for k in range(cfg.depth):
        t = cursor - (cfg.depth - 1) + k
        if t < 0:
            continue
        out[k * cfg.m:(k + 1) * cfg.m] = _minute_features(bars, t, cfg)
    return out


def _minute_features(bars, t: int, cfg: FeatureConfig) -> np.ndarray:
    f = np.zeros(cfg.m)
    bar = bars[t]
    if t >= 1:
        f[0] = cfg.return_scale * np.log(bar.close / bars[t - 1].close)
    f[1] = (bar.high - bar.low) / bar.close
    f[2] = (bar.close - bar.open) / bar.close
    lo = max(0, t - cfg.vol_window + 1)
    window = np.array([bars[j].volume for j in range(lo, t + 1)])
    std = window.std()
    f[3] = (bar.volume - window.mean()) / std if std > 0 else 0.0
    minute = bar.timestamp % MINUTES_PER_DAY
    phase = 2.0 * np.pi * minute / MINUTES_PER_DAY
    f[4] = np.sin(phase)
    f[5] = np.cos(phase)
    for j in range(cfg.n_lags):
        tj = t - 1 - j
        if tj >= 1:
            f[6 + j] = cfg.return_scale * np.log(
                bars[tj].close / bars[tj - 1].close)
    return f


class EpisodeDone(RuntimeError):
    pass


class TradingEnv:
    """Fixed-volume single-instrument environment over an immutable bar list.

    A step trades to the desired position at close[cursor], advances one
    minute, and rewards the gross portfolio change minus the (possibly
    scaled) commission and repetition penalty. True commission is accumulated
    in `commission_paid` and never deducted from `cash`.
    """

    def __init__(self, bars, cfg: EnvConfig):
        if len(bars) < 2:
            raise ValueError("need at least 2 bars")
        self.bars = bars
        self.cfg = cfg
        self.reset(0)

    def reset(self, start_cursor: int = 0) -> np.ndarray:
        if not 0 <= start_cursor < len(self.bars) - 1:
            raise IndexError(f"start cursor {start_cursor} out of range")
        self.cursor = start_cursor
        self.position = 0
        self.cash = self.cfg.start_capital
        self.commission_paid = 0.0
        self.run_length = 0
        self.steps = 0
        self.done = False
        return make_state(self.bars, self.cursor, self.cfg.features)

    def current_state(self) -> np.ndarray:
        return make_state(self.bars, self.cursor, self.cfg.features)

    @property
    def portfolio(self) -> float:
        return portfolio_value(self.cash, self.position,
                               self.bars[self.cursor].close)

    def step(self, action: int):
        if self.done:
            raise EpisodeDone("step() after episode end")
        if action not in ACTIONS:
            raise ValueError(f"action must be one of {ACTIONS}, got {action}")
        price = self.bars[self.cursor].close
        c_prev = self.portfolio
        prev_position = self.position
        ops = abs(action - prev_position)
        self.cash -= (action - prev_position) * price
        self.position = action
        self.commission_paid += self.cfg.fee_per_operation * ops

        self.run_length = self.run_length + 1 if action == prev_position else 1

        self.cursor += 1
        self.steps += 1
        c_now = self.portfolio
        reward = compute_reward(c_now, c_prev, action, prev_position,
                                self.run_length, self.cfg)
        if self.steps >= self.cfg.episode_length or self.cursor >= len(self.bars) - 1:
            self.done = True
        return make_state(self.bars, self.cursor, self.cfg.features), reward, self.done
