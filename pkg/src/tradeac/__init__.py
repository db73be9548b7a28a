"""Actor-critic training and backtesting for fixed-volume trading."""

from .architectures import ActorCriticNet, ArchitectureSpec, named_spec
from .market import Bar, EnvConfig, FeatureConfig, TradingEnv
from .data import BarSeries, generate_synthetic, parse_bar_csv
from .trainer import TrainConfig, train
from .backtest import BacktestReport, run_backtest

__all__ = [
    "ActorCriticNet", "ArchitectureSpec", "named_spec",
    "Bar", "EnvConfig", "FeatureConfig", "TradingEnv",
    "BarSeries", "generate_synthetic", "parse_bar_csv",
    "TrainConfig", "train",
    "BacktestReport", "run_backtest",
]
