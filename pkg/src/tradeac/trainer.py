"""Asynchronous advantage actor-critic training over a shared parameter store.

Workers hold independent network copies and environments; the store hands out
consistent parameter snapshots and applies RMSProp updates atomically under a
lock. Single-worker mode is fully sequential and bitwise reproducible.
"""

from __future__ import annotations

import csv
import os
import threading
from dataclasses import dataclass, field

import numpy as np

from .architectures import ActorCriticNet, ArchitectureSpec
from .data import checkpoint_from_net, save_checkpoint
from .market import ACTIONS, EnvConfig, TradingEnv
from .returns import Trajectory, advantages, discounted_returns


@dataclass
class TrainConfig:
    n_steps: int = 200
    n_workers: int = 10
    critic_weight: float = 0.5          # alpha in the combined loss
    entropy_coeff: float = 0.0          # beta
    learning_rate: float = 1e-3
    rmsprop_decay: float = 0.99
    rmsprop_epsilon: float = 1e-8
    epochs: int = 1000
    grad_clip_norm: float = 40.0        # 0 disables clipping
    gamma: float = 0.99
    advantage_form: str = "multistep"
    reward_scale: float = 1.0           # rewards scaled before targets/advantages
    seed: int = 0
    checkpoint_every: int = 10

    def __post_init__(self):
        if self.n_steps < 1 or self.n_workers < 1:
            raise ValueError("n_steps and n_workers must be >= 1")
        if not 0.0 <= self.critic_weight <= 1.0:
            raise ValueError("critic_weight must be in [0, 1]")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        if self.learning_rate <= 0 or self.rmsprop_epsilon <= 0:
            raise ValueError("rates must be positive")
        if self.entropy_coeff < 0 or self.grad_clip_norm < 0:
            raise ValueError("entropy_coeff and grad_clip_norm must be >= 0")


class ParameterStore:
    """Versioned global parameters with an RMSProp accumulator.

    snapshot() returns a consistent copy; apply() is atomic. Gradients may be
    stale (computed against an older version) -- that is the A3C contract.
    """

    def __init__(self, theta: np.ndarray):
        self.theta = np.array(theta, dtype=np.float64)
        self.v = np.zeros_like(self.theta)
        self.version = 0
        self._lock = threading.Lock()

    def snapshot(self) -> tuple[np.ndarray, int]:
        with self._lock:
            return self.theta.copy(), self.version

    def apply(self, grads: np.ndarray, lr: float, decay: float, eps: float):
        if grads.shape != self.theta.shape:
            raise ValueError(
                f"gradient length {grads.shape} != store {self.theta.shape}")
        if not np.all(np.isfinite(grads)):
            raise ValueError("non-finite gradient rejected")
        with self._lock:
            self.v *= decay
            self.v += (1.0 - decay) * grads * grads
            self.theta -= lr * grads / np.sqrt(self.v + eps)
            self.version += 1


def rmsprop_apply(store: ParameterStore, grads: np.ndarray, lr: float,
                  decay: float, eps: float):
    store.apply(grads, lr, decay, eps)


def sample_action(policy: np.ndarray, rng: np.random.Generator) -> int:
    idx = int(rng.choice(len(ACTIONS), p=policy))
    return idx


def collect_rollout(net: ActorCriticNet, env: TradingEnv, n_steps: int,
                    rng: np.random.Generator) -> Trajectory:
    """Run the sampled policy for up to n_steps; bootstrap with V of the
    next state when the rollout was truncated mid-episode."""
    traj = Trajectory(initial_recurrent=net.get_recurrent())
    state = env.current_state()
    for _ in range(n_steps):
        policy, value = net.forward(state, train=True)
        net.clear_caches()  # collection pass needs no gradients
        idx = sample_action(policy, rng)
        next_state, reward, done = env.step(ACTIONS[idx])
        traj.states.append(state)
        traj.actions.append(idx)
        traj.rewards.append(reward)
        traj.values.append(value)
        traj.action_probs.append(float(policy[idx]))
        state = next_state
        if done:
            break
    if env.done:
        traj.bootstrap_value = 0.0
    else:
        rec = net.get_recurrent()
        _, traj.bootstrap_value = net.forward(state, train=False)
        net.set_recurrent(rec)
    return traj


def loss_and_grads(net: ActorCriticNet, traj: Trajectory, cfg: TrainConfig,
                   advantages_override=None):
    """Combined actor-critic loss over one trajectory and its flat gradient.

    Forward passes are recomputed in train mode from the trajectory's initial
    recurrent state; advantages are detached constants for the actor term.
    `advantages_override` pins them explicitly (finite-difference checks need
    this, since perturbing parameters must not move the detached constants).
    """
    traj.validate()
    T = len(traj)
    net.zero_grads()
    net.clear_caches()
    net.set_recurrent(traj.initial_recurrent)

    rewards = np.asarray(traj.rewards) * cfg.reward_scale
    bootstrap = traj.bootstrap_value * cfg.reward_scale
    targets = discounted_returns(rewards, cfg.gamma, bootstrap)

    policies = []
    values = np.empty(T)
    for t in range(T):
        p, v = net.forward(traj.states[t], train=True)
        policies.append(p)
        values[t] = v

    if advantages_override is not None:
        advs = np.asarray(advantages_override, dtype=np.float64)
    else:
        advs = advantages(rewards, values, cfg.gamma, bootstrap,
                          cfg.advantage_form)

    loss = 0.0
    dlogits_seq = []
    dvalue_seq = np.empty(T)
    alpha, beta = cfg.critic_weight, cfg.entropy_coeff
    for t in range(T):
        p = policies[t]
        pa = p[traj.actions[t]]
        if pa <= 0.0:
            raise ValueError("log of zero action probability")
        err = targets[t] - values[t]
        logp = np.log(p)
        entropy = -float(p @ logp)
        loss += alpha * err * err - np.log(pa) * advs[t] - beta * entropy
        onehot = np.zeros(len(p))
        onehot[traj.actions[t]] = 1.0
        dlogits = (p - onehot) * advs[t]
        if beta:
            dlogits += beta * p * (logp + entropy)
        dlogits_seq.append(dlogits)
        dvalue_seq[t] = -2.0 * alpha * err

    net.backward_sequence(dlogits_seq, dvalue_seq)
    grads = net.flat_grads()
    if cfg.grad_clip_norm > 0:
        norm = np.linalg.norm(grads)
        if norm > cfg.grad_clip_norm:
            grads *= cfg.grad_clip_norm / norm
    return float(loss), grads


class _EpochStats:
    def __init__(self):
        self.lock = threading.Lock()
        self.rewards = []
        self.losses = []
        self.updates_per_worker = {}

    def add(self, worker_id, reward, loss):
        with self.lock:
            self.rewards.append(reward)
            self.losses.append(loss)
            self.updates_per_worker[worker_id] = \
                self.updates_per_worker.get(worker_id, 0) + 1


def worker_loop(worker_id: int, store: ParameterStore, env_factory,
                arch: ArchitectureSpec, cfg: TrainConfig, n_rollouts: int,
                stats: _EpochStats, net: ActorCriticNet | None = None,
                rng: np.random.Generator | None = None):
    """Collect-and-apply loop for one worker: snapshot global params, roll
    out, compute gradients, apply to the store. Returns (net, rng) so a
    sequential caller can keep worker state across epochs."""
    if net is None:
        net = ActorCriticNet(arch, rng_seed=cfg.seed + worker_id)
    if rng is None:
        rng = np.random.default_rng(cfg.seed * 7919 + worker_id)
    env = env_factory(worker_id)
    max_start = max(1, len(env.bars) - cfg.n_steps - 1)
    env.reset(int(rng.integers(0, max_start)))
    net.reset_recurrent()

    for _ in range(n_rollouts):
        theta, _ = store.snapshot()
        net.set_flat(theta)
        if env.done:
            env.reset(int(rng.integers(0, max_start)))
            net.reset_recurrent()
        traj = collect_rollout(net, env, cfg.n_steps, rng)
        loss, grads = loss_and_grads(net, traj, cfg)
        store.apply(grads, cfg.learning_rate, cfg.rmsprop_decay,
                    cfg.rmsprop_epsilon)
        stats.add(worker_id, float(np.sum(traj.rewards)), loss)
    return net, rng


@dataclass
class TrainResult:
    checkpoint_path: str
    curve: list = field(default_factory=list)  # (epoch, mean_reward, mean_loss)
    store: ParameterStore = None
    final_net: ActorCriticNet = None


def train(cfg: TrainConfig, arch: ArchitectureSpec, series, env_cfg: EnvConfig,
          out_dir: str, deterministic: bool = False) -> TrainResult:
    """Run the worker pool for cfg.epochs epochs over the training series.

    One epoch = the pool collectively consuming ~len(series)/n_steps rollouts.
    Writes `training_curve.csv` and periodic + final checkpoints in out_dir.
    """
    if len(series) < env_cfg.episode_length:
        raise ValueError("series shorter than one episode")
    if arch.input_dim != env_cfg.features.input_dim:
        raise ValueError(
            f"architecture input dim {arch.input_dim} != feature dim "
            f"{env_cfg.features.input_dim}")
    os.makedirs(out_dir, exist_ok=True)
    n_workers = 1 if deterministic else cfg.n_workers

    seed_net = ActorCriticNet(arch, rng_seed=cfg.seed)
    store = ParameterStore(seed_net.get_flat())

    def env_factory(worker_id):
        return TradingEnv(series, env_cfg)

    rollouts_per_epoch = max(1, len(series) // cfg.n_steps)
    quotas = [rollouts_per_epoch // n_workers] * n_workers
    for i in range(rollouts_per_epoch % n_workers):
        quotas[i] += 1

    curve = []
    curve_path = os.path.join(out_dir, "training_curve.csv")
    worker_state = [(None, None)] * n_workers
    with open(curve_path, "w", newline="") as curve_file:
        writer = csv.writer(curve_file)
        writer.writerow(["epoch", "mean_reward", "loss"])
        for epoch in range(1, cfg.epochs + 1):
            stats = _EpochStats()
            if n_workers == 1:
                worker_state[0] = worker_loop(
                    0, store, env_factory, arch, cfg, quotas[0], stats,
                    *worker_state[0])
            else:
                threads = []
                results = [None] * n_workers
                def run(i):
                    results[i] = worker_loop(
                        i, store, env_factory, arch, cfg, quotas[i], stats,
                        *worker_state[i])
                for i in range(n_workers):
                    t = threading.Thread(target=run, args=(i,), daemon=True)
                    threads.append(t)
                    t.start()
                for t in threads:
                    t.join()
                worker_state = results
            mean_reward = float(np.mean(stats.rewards)) if stats.rewards else 0.0
            mean_loss = float(np.mean(stats.losses)) if stats.losses else 0.0
            curve.append((epoch, mean_reward, mean_loss))
            writer.writerow([epoch, repr(mean_reward), repr(mean_loss)])
            if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
                _write_checkpoint(store, arch, env_cfg, cfg, epoch,
                                  os.path.join(out_dir, f"epoch_{epoch:06d}"))

    final_net = ActorCriticNet(arch, rng_seed=cfg.seed)
    final_net.set_flat(store.snapshot()[0])
    final_path = os.path.join(out_dir, "final")
    ckpt = checkpoint_from_net(final_net, env_cfg.features,
                               metadata={"seed": cfg.seed, "epochs": cfg.epochs})
    save_checkpoint(final_path, ckpt)
    return TrainResult(checkpoint_path=final_path, curve=curve, store=store,
                       final_net=final_net)


def _write_checkpoint(store, arch, env_cfg, cfg, epoch, path):
    net = ActorCriticNet(arch, rng_seed=cfg.seed)
    net.set_flat(store.snapshot()[0])
    ckpt = checkpoint_from_net(net, env_cfg.features,
                               metadata={"seed": cfg.seed, "epochs": epoch})
    save_checkpoint(path, ckpt)
