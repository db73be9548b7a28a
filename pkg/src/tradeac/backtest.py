"""Deterministic evaluation: argmax policy, dropout off, true commissions,
and the economic metrics (profit % p.a. with/without commission, Sharpe,
winning fraction, average transaction)."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .architectures import ActorCriticNet
from .data import Checkpoint, net_from_checkpoint
from .market import ACTIONS, MINUTES_PER_DAY, EnvConfig, TradingEnv

FEE_PER_OPERATION = 1.25
FEE_PER_TRANSACTION = 2.50


class MetricError(ValueError):
    pass


@dataclass
class Transaction:
    open_time: int
    close_time: int | None
    direction: int           # +1 long, -1 short
    entry_price: float
    exit_price: float | None = None
    fee: float = FEE_PER_TRANSACTION

    @property
    def net_pnl(self) -> float:
        if self.exit_price is None:
            raise ValueError("transaction still open")
        return self.direction * (self.exit_price - self.entry_price) - self.fee


@dataclass
class BacktestReport:
    equity_curve: list = field(default_factory=list)   # (timestamp, net equity)
    transactions: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    gross_profit: float = 0.0
    commission_paid: float = 0.0
    begin_price: float = 0.0
    number_of_days: float = 0.0
    no_transactions: bool = False

    @property
    def n_trades(self) -> int:
        return len(self.transactions)


def profit_pct_pa(profit: float, begin_price: float,
                  number_of_days: float) -> float:
    """Annualized profitability in percent: 100*(profit/begin)*(365/days)."""
    if begin_price <= 0:
        raise MetricError(f"begin_price must be positive, got {begin_price}")
    if number_of_days <= 0:
        raise MetricError(f"number_of_days must be positive, got {number_of_days}")
    return 100.0 * (profit / begin_price) * (365.0 / number_of_days)


def profit_pct_pa_commission(profit: float, n_trades: int, begin_price: float,
                             number_of_days: float,
                             fee: float = FEE_PER_TRANSACTION) -> float:
    """Annualized profitability net of the per-round-trip fee."""
    if n_trades < 0:
        raise MetricError("n_trades must be nonnegative")
    return profit_pct_pa(profit - n_trades * fee, begin_price, number_of_days)


def sharpe_ratio(period_profits) -> float:
    """Mean over population standard deviation of per-period profits."""
    p = np.asarray(period_profits, dtype=np.float64)
    if p.size < 2:
        raise MetricError("need at least 2 periods for a Sharpe ratio")
    std = p.std()
    if std == 0.0:
        raise MetricError("zero variability")
    return float(p.mean() / std)


def transaction_stats(pnls) -> tuple[float, float, bool]:
    """(winning fraction in percent, average pnl, empty flag)."""
    pnls = list(pnls)
    if not pnls:
        return 0.0, 0.0, True
    wins = sum(1 for x in pnls if x > 0)
    return 100.0 * wins / len(pnls), sum(pnls) / len(pnls), False


class _Ledger:
    """Round-trip transaction tracker: a reversal closes one transaction and
    opens the next in the same step."""

    def __init__(self, fee_per_transaction: float = FEE_PER_TRANSACTION):
        self.fee = fee_per_transaction
        self.closed: list[Transaction] = []
        self.open: Transaction | None = None

    def on_position_change(self, old: int, new: int, price: float, ts: int):
        if old == new:
            return
        if self.open is not None and new != self.open.direction:
            self.open.exit_price = price
            self.open.close_time = ts
            self.closed.append(self.open)
            self.open = None
        if new != 0 and self.open is None:
            self.open = Transaction(open_time=ts, close_time=None,
                                    direction=new, entry_price=price,
                                    fee=self.fee)

    def close_out(self, price: float, ts: int):
        if self.open is not None:
            self.on_position_change(self.open.direction, 0, price, ts)


def run_policy_backtest(policy_fn, series, env_cfg: EnvConfig) -> BacktestReport:
    """Backtest an arbitrary state->action function over the whole series.

    Uses true fees (multiplier 1) and no repetition penalty regardless of the
    training settings. Equity is net of commission; any position left open at
    the end is closed at the final close (commission charged).
    """
    if len(series) <= env_cfg.features.depth:
        raise ValueError("series shorter than the feature depth")
    cfg = EnvConfig(fee_per_operation=env_cfg.fee_per_operation,
                    train_fee_multiplier=1.0, repetition_penalty=0.0,
                    episode_length=len(series),
                    start_capital=env_cfg.start_capital,
                    features=env_cfg.features)
    env = TradingEnv(series.bars if hasattr(series, "bars") else series, cfg)
    state = env.reset(0)
    ledger = _Ledger(fee_per_transaction=2.0 * cfg.fee_per_operation)
    report = BacktestReport()
    initial_equity = env.portfolio
    report.equity_curve.append((env.bars[env.cursor].timestamp,
                                env.portfolio - env.commission_paid))
    while not env.done:
        ts = env.bars[env.cursor].timestamp
        price = env.bars[env.cursor].close
        action = policy_fn(state)
        old = env.position
        state, _, _ = env.step(action)
        ledger.on_position_change(old, action, price, ts)
        report.equity_curve.append((env.bars[env.cursor].timestamp,
                                    env.portfolio - env.commission_paid))

    # close any open position at the final close
    final_bar = env.bars[env.cursor]
    if env.position != 0:
        env.cash += env.position * final_bar.close
        env.commission_paid += env.cfg.fee_per_operation * abs(env.position)
        ledger.close_out(final_bar.close, final_bar.timestamp)
        env.position = 0
        report.equity_curve[-1] = (final_bar.timestamp,
                                   env.portfolio - env.commission_paid)

    report.transactions = ledger.closed
    report.commission_paid = env.commission_paid
    report.gross_profit = env.portfolio - initial_equity
    report.begin_price = env.bars[0].close
    first_ts = env.bars[0].timestamp
    report.number_of_days = max(
        (final_bar.timestamp - first_ts) / MINUTES_PER_DAY,
        1.0 / MINUTES_PER_DAY)
    _fill_metrics(report, fee=2.0 * cfg.fee_per_operation)
    return report


def _fill_metrics(report: BacktestReport, fee: float = FEE_PER_TRANSACTION):
    pnls = [t.net_pnl for t in report.transactions]
    winning, avg, empty = transaction_stats(pnls)
    report.no_transactions = empty
    daily = _daily_profits(report.equity_curve)
    try:
        sharpe = sharpe_ratio(daily)
    except MetricError:
        sharpe = 0.0
    report.metrics = {
        "profit_pct_pa": profit_pct_pa(report.gross_profit, report.begin_price,
                                       report.number_of_days),
        "profit_pct_pa_commission": profit_pct_pa_commission(
            report.gross_profit, report.n_trades, report.begin_price,
            report.number_of_days, fee=fee),
        "sharpe": sharpe,
        "winning_fraction": winning,
        "avg_transaction_rubles": avg,
    }


def _daily_profits(equity_curve) -> list[float]:
    """Net equity change per calendar day of the test window."""
    by_day: dict[int, list[float]] = {}
    for ts, eq in equity_curve:
        by_day.setdefault(ts // MINUTES_PER_DAY, []).append(eq)
    days = sorted(by_day)
    profits = []
    prev_close = by_day[days[0]][0]
    for d in days:
        eq_close = by_day[d][-1]
        profits.append(eq_close - prev_close)
        prev_close = eq_close
    return profits


def run_backtest(ckpt: Checkpoint, series, env_cfg: EnvConfig | None = None) -> BacktestReport:
    """Backtest a trained checkpoint: eval mode, argmax action selection
    (ties break toward the lowest action index, i.e. -1)."""
    env_cfg = env_cfg or EnvConfig(features=ckpt.features)
    if env_cfg.features.to_dict() != ckpt.features.to_dict():
        raise ValueError("checkpoint feature config does not match environment")
    net = net_from_checkpoint(ckpt)
    return net_backtest(net, series, env_cfg)


def net_backtest(net: ActorCriticNet, series, env_cfg: EnvConfig) -> BacktestReport:
    net.reset_recurrent()

    def policy_fn(state):
        policy, _ = net.forward(state, train=False)
        return ACTIONS[int(np.argmax(policy))]

    return run_policy_backtest(policy_fn, series, env_cfg)


def write_report(report: BacktestReport, out_dir: str, name: str = "backtest"):
    """Emit the human-readable table plus equity and transaction CSVs."""
    os.makedirs(out_dir, exist_ok=True)
    m = report.metrics
    lines = [
        f"{'Profit % per annum':35s} {m['profit_pct_pa']:12.2f}",
        f"{'Profit % per annum (commis.)':35s} {m['profit_pct_pa_commission']:12.2f}",
        f"{'Sharpe ratio':35s} {m['sharpe']:12.2f}",
        f"{'Fraction of winning transactions':35s} {m['winning_fraction']:12.2f}",
        f"{'Average transaction, rubles':35s} {m['avg_transaction_rubles']:12.2f}",
        f"{'Number of transactions':35s} {report.n_trades:12d}",
    ]
    if report.no_transactions:
        lines.append("note: no transactions executed")
    with open(os.path.join(out_dir, f"{name}_metrics.txt"), "w") as f:
        f.write("\n".join(lines) + "\n")
    with open(os.path.join(out_dir, f"{name}_equity.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["timestamp", "equity"])
        for ts, eq in report.equity_curve:
            w.writerow([ts, repr(eq)])
    with open(os.path.join(out_dir, f"{name}_transactions.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["open_time", "close_time", "direction", "net_pnl"])
        for t in report.transactions:
            w.writerow([t.open_time, t.close_time, t.direction, repr(t.net_pnl)])
