"""Command-line pipeline: synth, train, backtest, gradcheck, report."""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import backtest as bt
from .architectures import ActorCriticNet
from .config import ConfigError, RunConfig, parse_config
from .data import (ParseError, CheckpointError, generate_synthetic,
                   load_checkpoint, parse_bar_csv, series_to_csv)
from .nn import grad_check
from .returns import Trajectory
from .trainer import TrainConfig, collect_rollout, loss_and_grads, train
from .market import TradingEnv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CHECK_FAILED = 4


def _load_series(cfg: RunConfig):
    if cfg.data_path:
        try:
            with open(cfg.data_path) as f:
                return parse_bar_csv(f.read(), source=cfg.data_path)
        except (OSError, ParseError) as exc:
            raise SystemExitError(EXIT_DATA, f"cannot load series: {exc}")
    synth = dict(cfg.synth)
    kind = synth.pop("kind", "sine")
    return generate_synthetic(kind, synth, seed=cfg.train.seed)


class SystemExitError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _file_checksum(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        h.update(f.read())
    return h.hexdigest()


def _write_manifest(out_dir: str, cfg: RunConfig, command: str):
    artifacts = {}
    for root, _, files in os.walk(out_dir):
        for name in sorted(files):
            if name == "run_manifest.json":
                continue
            p = os.path.join(root, name)
            artifacts[os.path.relpath(p, out_dir)] = _file_checksum(p)
    manifest = {
        "command": command,
        "seed": cfg.train.seed,
        "config": cfg.raw,
        "artifacts": artifacts,
    }
    with open(os.path.join(out_dir, "run_manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


def cmd_synth(cfg: RunConfig, args) -> int:
    series = _load_series(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, "series.csv")
    with open(path, "w") as f:
        f.write(series_to_csv(series))
    _write_manifest(cfg.out_dir, cfg, "synth")
    print(f"wrote {len(series)} bars to {path}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    series = _load_series(cfg)
    result = train(cfg.train, cfg.arch, series, cfg.env, cfg.out_dir,
                   deterministic=args.deterministic)
    _write_manifest(cfg.out_dir, cfg, "train")
    print(f"trained {cfg.train.epochs} epochs; "
          f"final checkpoint at {result.checkpoint_path}.json")
    return EXIT_OK


def cmd_backtest(cfg: RunConfig, args) -> int:
    series = _load_series(cfg)
    try:
        ckpt = load_checkpoint(args.checkpoint)
    except (OSError, CheckpointError) as exc:
        print(f"error: cannot load checkpoint: {exc}", file=sys.stderr)
        return EXIT_DATA
    if ckpt.features.to_dict() != cfg.env.features.to_dict():
        print(f"error: checkpoint features {ckpt.features.to_dict()} do not "
              f"match configured features {cfg.env.features.to_dict()}",
              file=sys.stderr)
        return EXIT_CONFIG
    report = bt.run_backtest(ckpt, series, cfg.env)
    name = os.path.basename(args.checkpoint)
    first, last = series[0].timestamp, series[len(series) - 1].timestamp
    run_dir = os.path.join(cfg.out_dir, f"{name}_{first}_{last}")
    bt.write_report(report, run_dir, name="backtest")
    _write_manifest(run_dir, cfg, "backtest")
    for key, value in report.metrics.items():
        print(f"{key}: {value:.4f}")
    print(f"n_trades: {report.n_trades}")
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    series = _load_series(cfg)
    net = ActorCriticNet(cfg.arch, rng_seed=cfg.train.seed)
    env = TradingEnv(series.bars, cfg.env)
    rng = np.random.default_rng(cfg.train.seed)
    env.reset(0)
    traj = collect_rollout(net, env, min(8, cfg.train.n_steps), rng)
    check_cfg = TrainConfig(
        n_steps=cfg.train.n_steps, critic_weight=cfg.train.critic_weight,
        entropy_coeff=cfg.train.entropy_coeff, gamma=cfg.train.gamma,
        grad_clip_norm=0.0, seed=cfg.train.seed,
        reward_scale=cfg.train.reward_scale)

    # advantages are detached constants in the loss; freeze them so finite
    # differences see the same constants at perturbed parameters
    from tradeac.returns import advantages as compute_advantages
    net.rng = np.random.default_rng(12345)
    net.reset_recurrent()
    values = []
    for s in traj.states:
        _, v = net.forward(s, train=True)
        values.append(v)
    net.clear_caches()
    fixed_adv = compute_advantages(
        np.asarray(traj.rewards) * check_cfg.reward_scale, values,
        check_cfg.gamma, traj.bootstrap_value * check_cfg.reward_scale,
        check_cfg.advantage_form)
    probe = 1e-2  # lifts barely-excited coordinates above the fd noise floor

    def fn():
        net.rng = np.random.default_rng(12345)
        net.reset_recurrent()
        loss, grads = loss_and_grads(net, traj, check_cfg,
                                     advantages_override=fixed_adv)
        theta = net.get_flat()
        return loss + 0.5 * probe * float(theta @ theta), \
            grads + probe * theta

    err = grad_check(fn, net.registry(), eps=1e-5, max_checks=500,
                     rng=np.random.default_rng(0))
    print(f"max relative gradient error: {err:.3e}")
    if err >= 1e-4:
        print("gradcheck FAILED (threshold 1e-4)", file=sys.stderr)
        return EXIT_CHECK_FAILED
    print("gradcheck passed")
    return EXIT_OK


def cmd_report(cfg: RunConfig, args) -> int:
    metrics_path = os.path.join(args.run_dir, "backtest_metrics.txt")
    if not os.path.exists(metrics_path):
        print(f"error: no backtest artifacts in {args.run_dir}", file=sys.stderr)
        return EXIT_DATA
    with open(metrics_path) as f:
        print(f.read(), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tradeac",
        description="Train and backtest an actor-critic trading policy.")
    parser.add_argument("--config", required=True, help="TOML config file")
    parser.add_argument("--seed", type=int, help="override [train] seed")
    parser.add_argument("--workers", type=int, help="override [train] n_workers")
    parser.add_argument("--deterministic", action="store_true",
                        help="single worker, fully seeded run")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", help="generate the configured synthetic series")
    sub.add_parser("train", help="train and write checkpoints + curve log")
    p_bt = sub.add_parser("backtest", help="run a checkpoint over the series")
    p_bt.add_argument("checkpoint", help="checkpoint path prefix (no .json)")
    sub.add_parser("gradcheck", help="finite-difference check on the "
                                     "configured architecture")
    p_rep = sub.add_parser("report", help="re-print metrics from a run dir")
    p_rep.add_argument("run_dir")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
    except (OSError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        cfg.train.seed = args.seed
    if args.workers is not None:
        cfg.train.n_workers = args.workers
    out_root = os.environ.get("TRADEAC_OUT")
    if out_root:
        cfg.out_dir = os.path.join(out_root, cfg.out_dir)
    handlers = {"synth": cmd_synth, "train": cmd_train,
                "backtest": cmd_backtest, "gradcheck": cmd_gradcheck,
                "report": cmd_report}
    try:
        return handlers[args.command](cfg, args)
    except SystemExitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
