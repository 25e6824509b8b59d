"""Multi-domain ingestion, channel-independent windowing, masks and batch sampling."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

SCALER_EPS = 1e-8
TRAIN_FRACTION = 0.7
TEST_FRACTION = 0.2
PARTS = ("train", "val", "test")


class DataError(ValueError):
    pass


@dataclass
class DomainSpec:
    name: str
    instruction: str
    channels: int
    lookback: int
    horizon: int
    stride: int
    csv_path: str = ""

    def __post_init__(self):
        for attr in ("channels", "lookback", "horizon", "stride"):
            if int(getattr(self, attr)) < 1:
                raise DataError(f"domain {self.name!r}: {attr} must be a positive integer")


@dataclass
class SeriesWindow:
    domain: str
    channel: int
    position: int
    history: np.ndarray
    target: np.ndarray


@dataclass
class DomainSplit:
    spec: DomainSpec
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    bounds: dict[str, tuple[int, int]]
    mean: np.ndarray
    std: np.ndarray

    def part(self, name: str) -> np.ndarray:
        if name not in PARTS:
            raise DataError(f"unknown split part {name!r}")
        return getattr(self, name)

    def scale(self, raw: np.ndarray) -> np.ndarray:
        return (raw - self.mean) / self.std

    def unscale(self, scaled: np.ndarray) -> np.ndarray:
        return scaled * self.std + self.mean


@dataclass
class Batch:
    domain: str
    inputs: np.ndarray      # [B, L]
    masks: np.ndarray       # [B, L] of {0, 1}
    targets: np.ndarray     # [B, T]
    channels: np.ndarray    # [B] channel index of each row

    def __len__(self) -> int:
        return self.inputs.shape[0]


def read_csv(path: str | Path, channels: int | None = None) -> np.ndarray:
    """Parse a header-first CSV into a float array [rows, channels].

    A first column named ``date`` is ignored. Extra columns beyond ``channels``
    are dropped.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        offset = 1 if header and header[0].strip().lower() == "date" else 0
        available = len(header) - offset
        want = available if channels is None else channels
        if available < want:
            raise DataError(f"{path}: {available} data columns, domain declares {want} channels")
        rows = []
        for r, row in enumerate(reader, start=2):
            if not row:
                continue
            values = []
            for c in range(offset, offset + want):
                cell = row[c] if c < len(row) else ""
                try:
                    values.append(float(cell))
                except ValueError:
                    raise DataError(f"{path}: non-numeric cell {cell!r} at row {r}, column {c + 1}") from None
            rows.append(values)
    return np.asarray(rows, dtype=np.float64).reshape(len(rows), want)


def split_bounds(n: int) -> dict[str, tuple[int, int]]:
    n_train = int(n * TRAIN_FRACTION)
    n_test = int(n * TEST_FRACTION)
    n_val = n - n_train - n_test
    return {
        "train": (0, n_train),
        "val": (n_train, n_train + n_val),
        "test": (n_train + n_val, n),
    }


def split_array(spec: DomainSpec, raw: np.ndarray) -> DomainSplit:
    """Chronological 70/10/20 split with a per-channel scaler fit on train only."""
    need = spec.lookback + spec.horizon
    if raw.shape[0] < need:
        raise DataError(f"domain {spec.name!r}: {raw.shape[0]} rows, need at least lookback+horizon={need}")
    bounds = split_bounds(raw.shape[0])
    lo, hi = bounds["train"]
    train_raw = raw[lo:hi]
    mu = train_raw.mean(axis=0)
    sd = train_raw.std(axis=0)
    sd = np.maximum(sd, SCALER_EPS)
    scaled = (raw - mu) / sd
    parts = {k: scaled[a:b] for k, (a, b) in bounds.items()}
    return DomainSplit(spec, parts["train"], parts["val"], parts["test"], bounds, mu, sd)


def load_domain(spec: DomainSpec) -> DomainSplit:
    raw = read_csv(spec.csv_path, spec.channels)
    return split_array(spec, raw)


def window_positions(rows: int, lookback: int, horizon: int) -> np.ndarray:
    count = rows - lookback - horizon + 1
    return np.arange(max(count, 0))


def window_index(split: DomainSplit, part: str) -> tuple[np.ndarray, np.ndarray]:
    """(positions, channels) of every window in ``part``, position-major."""
    arr = split.part(part)
    spec = split.spec
    pos = window_positions(arr.shape[0], spec.lookback, spec.horizon)
    if pos.size == 0:
        log.warning("domain %s: %s split has %d rows, fewer than lookback+horizon=%d; no windows",
                    spec.name, part, arr.shape[0], spec.lookback + spec.horizon)
    c = arr.shape[1]
    return np.repeat(pos, c), np.tile(np.arange(c), pos.size)


def gather(arr: np.ndarray, positions: np.ndarray, channels: np.ndarray,
           lookback: int, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    hist_idx = positions[:, None] + np.arange(lookback)[None, :]
    tgt_idx = positions[:, None] + lookback + np.arange(horizon)[None, :]
    ch = channels[:, None]
    return arr[hist_idx, ch], arr[tgt_idx, ch]


def enumerate_windows(split: DomainSplit, part: str) -> list[SeriesWindow]:
    spec = split.spec
    arr = split.part(part)
    positions, channels = window_index(split, part)
    hist, tgt = gather(arr, positions, channels, spec.lookback, spec.horizon)
    return [
        SeriesWindow(spec.name, int(c), int(p), h, t)
        for p, c, h, t in zip(positions, channels, hist, tgt)
    ]


def mask_zero_count(length: int, ratio: float) -> int:
    if not 0.0 <= ratio < 1.0:
        raise DataError(f"mask ratio must be in [0, 1), got {ratio}")
    return int(math.floor(ratio * length + 0.5))


def make_masks(rows: int, length: int, ratio: float, rng: np.random.Generator) -> np.ndarray:
    """[rows, length] binary masks, each with exactly round(ratio*length) zeros."""
    k = mask_zero_count(length, ratio)
    masks = np.ones((rows, length))
    if k == 0 or rows == 0:
        return masks
    zero_at = np.argsort(rng.random((rows, length)), axis=1)[:, :k]
    np.put_along_axis(masks, zero_at, 0.0, axis=1)
    return masks


def make_mask(length: int, ratio: float, rng: np.random.Generator) -> np.ndarray:
    return make_masks(1, length, ratio, rng)[0]


@dataclass
class WindowPool:
    """All windows of one domain's split part, addressable by integer index."""

    spec: DomainSpec
    data: np.ndarray
    positions: np.ndarray
    channels: np.ndarray

    @classmethod
    def from_split(cls, split: DomainSplit, part: str = "train") -> "WindowPool":
        positions, channels = window_index(split, part)
        return cls(split.spec, split.part(part), positions, channels)

    def __len__(self) -> int:
        return int(self.positions.size)

    def batch(self, idx: np.ndarray, masks: np.ndarray | None = None) -> Batch:
        idx = np.asarray(idx, dtype=np.int64)
        hist, tgt = gather(self.data, self.positions[idx], self.channels[idx],
                           self.spec.lookback, self.spec.horizon)
        if masks is None:
            masks = np.ones_like(hist)
        return Batch(self.spec.name, hist, masks, tgt, self.channels[idx].copy())

    def iter_batches(self, batch_size: int) -> Iterator[Batch]:
        """Deterministic in-order pass with masking off (validation / test)."""
        for start in range(0, len(self), batch_size):
            yield self.batch(np.arange(start, min(start + batch_size, len(self))))


def domain_probabilities(sizes: Sequence[int], alpha: float) -> np.ndarray:
    w = np.asarray(sizes, dtype=np.float64) ** alpha
    return w / w.sum()


def epoch_length(pools: Mapping[str, WindowPool], batch_size: int) -> int:
    return math.ceil(sum(len(p) for p in pools.values()) / batch_size)


def sample_batches(pools: Mapping[str, WindowPool], batch_size: int, alpha: float,
                   rng: np.random.Generator, mask_ratio: float = 0.0) -> Iterator[Batch]:
    """One epoch of single-domain batches.

    Each batch picks its domain with probability proportional to n**alpha
    (n = window count), then draws rows uniformly with replacement.
    """
    if not pools:
        raise DataError("sample_batches: empty window pool")
    names = list(pools)
    sizes = [len(pools[k]) for k in names]
    empty = [k for k, n in zip(names, sizes) if n == 0]
    if empty:
        raise DataError(f"sample_batches: domains without training windows: {empty}")
    probs = domain_probabilities(sizes, alpha)
    for _ in range(epoch_length(pools, batch_size)):
        k = int(rng.choice(len(names), p=probs))
        pool = pools[names[k]]
        idx = rng.integers(0, len(pool), size=batch_size)
        masks = make_masks(batch_size, pool.spec.lookback, mask_ratio, rng)
        yield pool.batch(idx, masks)


@dataclass
class DomainData:
    """Loaded split plus cached window pools for each part."""

    split: DomainSplit
    pools: dict[str, WindowPool] = field(default_factory=dict)

    @property
    def spec(self) -> DomainSpec:
        return self.split.spec

    def pool(self, part: str) -> WindowPool:
        if part not in self.pools:
            self.pools[part] = WindowPool.from_split(self.split, part)
        return self.pools[part]
