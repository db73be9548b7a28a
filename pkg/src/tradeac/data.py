"""Bar-series ingestion, synthetic series generation, and checkpoint files.

Checkpoints are a JSON manifest plus a raw little-endian float64 binary blob;
round trips are bitwise exact.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .architectures import ArchitectureSpec
from .market import Bar, FeatureConfig

CHECKPOINT_FORMAT_VERSION = 1


class ParseError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class BarSeries:
    bars: list
    instrument: str = "synthetic"
    source: str = ""

    def __post_init__(self):
        if len(self.bars) < 2:
            raise ValueError("a bar series needs at least 2 bars")
        ts = [b.timestamp for b in self.bars]
        if any(nxt <= cur for cur, nxt in zip(ts, ts[1:])):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self):
        return len(self.bars)

    def __getitem__(self, i):
        return self.bars[i]

    def closes(self) -> np.ndarray:
        return np.array([b.close for b in self.bars])


REQUIRED_COLUMNS = ("timestamp", "open", "high", "low", "close", "volume")


def _parse_timestamp(raw: str, lineno: int) -> int:
    raw = raw.strip()
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        dt = datetime.fromisoformat(raw)
    except ValueError:
        raise ParseError(f"line {lineno}: unparseable timestamp {raw!r}")
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp() // 60)


def parse_bar_csv(text: str, instrument: str = "", source: str = "") -> BarSeries:
    """Parse `timestamp,open,high,low,close,volume` CSV (header required).

    Timestamps are epoch minutes or ISO-8601. Errors name the offending line.
    """
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ParseError("empty input")
    header = [h.strip().lower() for h in lines[0].split(",")]
    missing = [c for c in REQUIRED_COLUMNS if c not in header]
    if missing:
        raise ParseError(f"line 1: missing column(s) {missing}")
    idx = {c: header.index(c) for c in REQUIRED_COLUMNS}

    bars = []
    prev_ts = None
    for lineno, line in enumerate(lines[1:], start=2):
        parts = [p.strip() for p in line.split(",")]
        if len(parts) < len(header):
            raise ParseError(f"line {lineno}: expected {len(header)} fields, "
                             f"got {len(parts)}")
        ts = _parse_timestamp(parts[idx["timestamp"]], lineno)
        try:
            o, h, lo, c, v = (float(parts[idx[k]]) for k in
                              ("open", "high", "low", "close", "volume"))
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}")
        if prev_ts is not None and ts <= prev_ts:
            raise ParseError(f"line {lineno}: timestamp {ts} not after {prev_ts}")
        prev_ts = ts
        try:
            bars.append(Bar(ts, o, h, lo, c, v))
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}")
    if len(bars) < 2:
        raise ParseError("need at least 2 data rows")
    return BarSeries(bars, instrument=instrument, source=source)


def series_to_csv(series: BarSeries) -> str:
    rows = ["timestamp,open,high,low,close,volume"]
    for b in series.bars:
        rows.append(f"{b.timestamp},{b.open:.6f},{b.high:.6f},"
                    f"{b.low:.6f},{b.close:.6f},{b.volume:.6f}")
    return "\n".join(rows) + "\n"


def generate_synthetic(kind: str, params: dict | None = None,
                       seed: int = 0) -> BarSeries:
    """Deterministic synthetic minute-bar series.

    kind: "sine"        close(t) = p0 * (1 + amplitude*sin(2*pi*t/period))
          "random_walk" multiplicative Gaussian steps of scale `sigma`
          "trend"       exponential drift `mu` per minute plus noise `sigma`
    """
    params = dict(params or {})
    n = int(params.pop("n", 5000))
    p0 = float(params.pop("p0", 100_000.0))
    start_ts = int(params.pop("start_timestamp", 0))
    if p0 <= 0:
        raise ValueError("p0 must be positive")
    rng = np.random.default_rng(seed)
    t = np.arange(n)

    if kind == "sine":
        amplitude = float(params.pop("amplitude", 0.03))
        period = float(params.pop("period", 60.0))
        if not 0.0 <= amplitude < 1.0:
            raise ValueError("amplitude must be in [0, 1)")
        closes = p0 * (1.0 + amplitude * np.sin(2.0 * np.pi * t / period))
    elif kind == "random_walk":
        sigma = float(params.pop("sigma", 1e-3))
        closes = p0 * np.exp(np.cumsum(rng.normal(0.0, sigma, n)))
    elif kind == "trend":
        mu = float(params.pop("mu", 5e-5))
        sigma = float(params.pop("sigma", 1e-3))
        closes = p0 * np.exp(mu * t + np.cumsum(rng.normal(0.0, sigma, n)))
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    if params:
        raise ValueError(f"unknown parameters for kind {kind!r}: {sorted(params)}")

    opens = np.concatenate([[closes[0]], closes[:-1]])
    envelope = 1e-4 * closes * rng.random(n)
    highs = np.maximum(opens, closes) + envelope
    lows = np.minimum(opens, closes) - envelope
    volumes = 100.0 * (1.0 + rng.random(n))
    bars = [Bar(start_ts + int(i), float(opens[i]), float(highs[i]),
                float(lows[i]), float(closes[i]), float(volumes[i]))
            for i in range(n)]
    return BarSeries(bars, instrument=f"synthetic-{kind}",
                     source=f"seed={seed}")


@dataclass
class Checkpoint:
    arch: ArchitectureSpec
    features: FeatureConfig
    registry: list  # list of (name, shape tuple)
    values: np.ndarray  # flat float64, registry order
    metadata: dict = field(default_factory=dict)
    format_version: int = CHECKPOINT_FORMAT_VERSION

    def __post_init__(self):
        total = sum(int(np.prod(shape)) for _, shape in self.registry)
        if total != self.values.size:
            raise CheckpointError(
                f"registry declares {total} values, blob has {self.values.size}")


def checkpoint_from_net(net, features: FeatureConfig,
                        metadata: dict | None = None) -> Checkpoint:
    registry = [(name, p.value.shape) for name, p in net.registry()]
    return Checkpoint(arch=net.spec, features=features, registry=registry,
                      values=net.get_flat(), metadata=dict(metadata or {}))


def net_from_checkpoint(ckpt: Checkpoint):
    from .architectures import ActorCriticNet
    net = ActorCriticNet(ckpt.arch, rng_seed=0)
    names = [name for name, _ in net.registry()]
    if names != [name for name, _ in ckpt.registry]:
        raise CheckpointError("checkpoint registry does not match architecture")
    net.set_flat(ckpt.values)
    return net


def save_checkpoint(path: str, ckpt: Checkpoint):
    """Write `path.json` (manifest) and `path.bin` (LE float64 blob)."""
    blob = np.ascontiguousarray(ckpt.values, dtype="<f8").tobytes()
    offsets = []
    off = 0
    for name, shape in ckpt.registry:
        offsets.append({"name": name, "shape": list(shape), "offset": off})
        off += int(np.prod(shape))
    manifest = {
        "format_version": ckpt.format_version,
        "arch": ckpt.arch.to_dict(),
        "features": ckpt.features.to_dict(),
        "registry": offsets,
        "metadata": ckpt.metadata,
        "checksum": hashlib.sha256(blob).hexdigest(),
    }
    with open(path + ".json", "w") as f:
        json.dump(manifest, f, indent=2)
    with open(path + ".bin", "wb") as f:
        f.write(blob)


def load_checkpoint(path: str) -> Checkpoint:
    with open(path + ".json") as f:
        manifest = json.load(f)
    version = manifest.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version}")
    with open(path + ".bin", "rb") as f:
        blob = f.read()
    if hashlib.sha256(blob).hexdigest() != manifest["checksum"]:
        raise CheckpointError("checkpoint binary checksum mismatch")
    values = np.frombuffer(blob, dtype="<f8").astype(np.float64)
    registry = [(e["name"], tuple(e["shape"])) for e in manifest["registry"]]
    expected = sum(int(np.prod(s)) for _, s in registry)
    if expected != values.size:
        raise CheckpointError(
            f"registry/blob inconsistency: {expected} declared, {values.size} stored")
    arch = ArchitectureSpec.from_dict(manifest["arch"])
    features = FeatureConfig.from_dict(manifest["features"])
    return Checkpoint(arch=arch, features=features, registry=registry,
                      values=values, metadata=manifest.get("metadata", {}),
                      format_version=version)
