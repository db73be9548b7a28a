"""TOML run configuration: [train], [env], [arch], [data] sections.

Unknown keys are errors, not warnings. Architecture rows can be selected by
name or given explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:
    import tomli as tomllib

from .architectures import ArchitectureSpec, named_spec
from .market import EnvConfig, FeatureConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    train: TrainConfig
    env: EnvConfig
    arch: ArchitectureSpec
    data_path: str | None = None
    out_dir: str = "runs"
    synth: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)


_TRAIN_KEYS = {
    "n_steps": int, "n_workers": int, "critic_weight": float,
    "entropy_coeff": float, "learning_rate": float, "rmsprop_decay": float,
    "rmsprop_epsilon": float, "epochs": int, "grad_clip_norm": float,
    "gamma": float, "advantage_form": str, "reward_scale": float,
    "seed": int, "checkpoint_every": int,
}
_ENV_KEYS = {
    "fee_per_operation": float, "train_fee_multiplier": float,
    "repetition_penalty": float, "repetition_grace": int,
    "episode_length": int, "start_capital": float,
}
_FEATURE_KEYS = {"depth": int, "n_lags": int, "vol_window": int,
                 "return_scale": float}
_ARCH_KEYS = {"name": str, "depth": int, "dense": int, "dropout_p": float,
              "lstm": int, "dense_v": int, "dense_a": int, "feature_dim": int}
_DATA_KEYS = {"path": str, "out_dir": str, "kind": str, "n": int, "p0": float,
              "amplitude": float, "period": float, "sigma": float, "mu": float,
              "start_timestamp": int}


def _take(section: dict, allowed: dict, where: str) -> dict:
    out = {}
    for key, value in section.items():
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in [{where}]")
        want = allowed[key]
        if want is float and isinstance(value, int):
            value = float(value)
        if not isinstance(value, want):
            raise ConfigError(
                f"[{where}] {key} must be {want.__name__}, got {value!r}")
        out[key] = value
    return out


def parse_config(path: str) -> RunConfig:
    with open(path, "rb") as f:
        try:
            raw = tomllib.load(f)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}")
    known_sections = {"train", "env", "arch", "data", "features"}
    unknown = set(raw) - known_sections
    if unknown:
        raise ConfigError(f"unknown section(s) {sorted(unknown)}")

    train_kw = _take(raw.get("train", {}), _TRAIN_KEYS, "train")
    env_kw = _take(raw.get("env", {}), _ENV_KEYS, "env")
    feat_kw = _take(raw.get("features", {}), _FEATURE_KEYS, "features")
    arch_kw = _take(raw.get("arch", {}), _ARCH_KEYS, "arch")
    data_kw = _take(raw.get("data", {}), _DATA_KEYS, "data")

    try:
        features = FeatureConfig(**feat_kw)
        env = EnvConfig(features=features, **env_kw)
        train = TrainConfig(**train_kw)
    except ValueError as exc:
        raise ConfigError(str(exc))

    name = arch_kw.pop("name", None)
    if name is not None:
        if arch_kw and set(arch_kw) - {"feature_dim"}:
            raise ConfigError(
                "[arch] gives both a name and explicit layer fields; pick one")
        try:
            arch = named_spec(name, feature_dim=features.m)
        except KeyError as exc:
            raise ConfigError(str(exc))
    else:
        if not arch_kw:
            raise ConfigError("[arch] must give a name or explicit fields")
        arch_kw.setdefault("feature_dim", features.m)
        arch_kw.setdefault("name", "custom")
        try:
            arch = ArchitectureSpec(**arch_kw)
        except ValueError as exc:
            raise ConfigError(str(exc))
    if arch.feature_dim != features.m:
        raise ConfigError(
            f"arch feature_dim {arch.feature_dim} != feature vector size {features.m}")
    if arch.depth != features.depth:
        # depth drives both the state builder and the network input width
        features = FeatureConfig(depth=arch.depth, n_lags=features.n_lags,
                                 vol_window=features.vol_window,
                                 return_scale=features.return_scale)
        env = EnvConfig(features=features, **env_kw)

    synth = {k: v for k, v in data_kw.items() if k not in ("path", "out_dir")}
    return RunConfig(train=train, env=env, arch=arch,
                     data_path=data_kw.get("path"),
                     out_dir=data_kw.get("out_dir", "runs"),
                     synth=synth, raw=raw)
