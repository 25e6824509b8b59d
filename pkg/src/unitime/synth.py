"""Synthetic multi-domain series in the CSV schema the data module reads."""

from __future__ import annotations

import configparser
import datetime as dt
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import DomainSpec

KINDS = ("seasonal", "trend-seasonal", "random-walk", "noisy-chaotic")
LOGISTIC_R = 3.9
_START = dt.datetime(2020, 1, 1)


class SynthError(ValueError):
    pass


@dataclass
class GeneratorSpec:
    kind: str
    channels: int
    rows: int
    periods: tuple[float, ...] = (24.0,)
    trend_slope: float = 0.0
    noise_std: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SynthError(f"unknown generator kind {self.kind!r}; choose from {KINDS}")
        if self.channels < 1 or self.rows < 1:
            raise SynthError("channels and rows must be positive")
        if self.noise_std < 0:
            raise SynthError("noise_std must be >= 0")
        if self.kind in ("seasonal", "trend-seasonal") and not self.periods:
            raise SynthError(f"{self.kind} generator needs at least one period")
        self.periods = tuple(float(p) for p in self.periods)


def _seasonal(spec: GeneratorSpec, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(spec.rows)[:, None]
    offset = rng.uniform(0.0, 2 * np.pi)
    phase = offset + 2 * np.pi * np.arange(spec.channels)[None, :] / spec.channels
    out = np.zeros((spec.rows, spec.channels))
    for k, p in enumerate(spec.periods):
        out += np.sin(2 * np.pi * t / p + phase) / (k + 1)
    return out


def generate_array(spec: GeneratorSpec) -> np.ndarray:
    """[rows, channels] values for ``spec``; deterministic in ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    n, c = spec.rows, spec.channels
    if spec.kind == "random-walk":
        steps = spec.trend_slope + spec.noise_std * rng.standard_normal((n, c))
        return np.cumsum(steps, axis=0)
    if spec.kind == "noisy-chaotic":
        x = np.empty((n, c))
        x[0] = rng.uniform(0.1, 0.9, size=c)
        for i in range(1, n):
            x[i] = LOGISTIC_R * x[i - 1] * (1.0 - x[i - 1])
        return 2.0 * (x - 0.5) + spec.noise_std * rng.standard_normal((n, c))
    out = _seasonal(spec, rng)
    if spec.kind == "trend-seasonal":
        out += spec.trend_slope * np.arange(n)[:, None]
    return out + spec.noise_std * rng.standard_normal((n, c))


def to_csv(values: np.ndarray) -> str:
    header = "date," + ",".join(f"ch{i}" for i in range(values.shape[1]))
    lines = [header]
    for i, row in enumerate(values):
        stamp = (_START + dt.timedelta(hours=i)).strftime("%Y-%m-%d %H:%M:%S")
        lines.append(stamp + "," + ",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def generate(spec: GeneratorSpec, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(to_csv(generate_array(spec)), encoding="utf-8")
    return path


@dataclass
class SuiteDomain:
    domain: DomainSpec
    generator: GeneratorSpec


SUITE_ROWS = 1500


def default_suite(seed: int = 0, rows: int = SUITE_ROWS) -> list[SuiteDomain]:
    """Three domains with different channel counts, lookbacks, horizons and strides."""
    entries = [
        (DomainSpec("D1", "hourly sensor readings with strong daily seasonal cycles", 3, 96, 48, 16),
         GeneratorSpec("seasonal", 3, rows, periods=(24.0, 8.0), noise_std=0.1)),
        (DomainSpec("D2", "power load with a rising trend and short periodic swings", 5, 64, 24, 8),
         GeneratorSpec("trend-seasonal", 5, rows, periods=(12.0,), trend_slope=0.004, noise_std=0.15)),
        (DomainSpec("D3", "exchange rate drifting upward like a random walk", 2, 36, 12, 4),
         GeneratorSpec("random-walk", 2, rows, trend_slope=0.1, noise_std=0.1)),
    ]
    out = []
    for k, (dom, gen) in enumerate(entries):
        gen = replace(gen, seed=seed * 100 + k)
        if gen.rows < dom.lookback + dom.horizon + 100:
            raise SynthError(f"{dom.name}: rows {gen.rows} < lookback+horizon+100")
        out.append(SuiteDomain(dom, gen))
    return out


def write_suite(out_dir: str | Path, suite: list[SuiteDomain]) -> list[DomainSpec]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    specs = []
    for entry in suite:
        path = generate(entry.generator, out_dir / f"{entry.domain.name}.csv")
        specs.append(replace(entry.domain, csv_path=str(path)))
    return specs


_GEN_KEYS = {"kind", "channels", "rows", "periods", "trend_slope", "noise_std", "seed"}


def parse_generator_file(text: str) -> dict[str, GeneratorSpec]:
    """INI with one section per output file; keys are GeneratorSpec fields (periods comma-separated)."""
    cp = configparser.ConfigParser(interpolation=None, default_section="\x00unused")
    cp.optionxform = str
    cp.read_string(text)
    specs = {}
    for sec in cp.sections():
        keys = set(cp[sec])
        unknown = keys - _GEN_KEYS
        if unknown:
            raise SynthError(f"[{sec}] unknown keys: {sorted(unknown)}")
        s = cp[sec]
        if "kind" not in s or "channels" not in s or "rows" not in s:
            raise SynthError(f"[{sec}] needs kind, channels and rows")
        periods = tuple(float(p) for p in s.get("periods", "24").split(",") if p.strip())
        specs[sec] = GeneratorSpec(
            kind=s["kind"].strip(),
            channels=int(s["channels"]),
            rows=int(s["rows"]),
            periods=periods,
            trend_slope=float(s.get("trend_slope", "0")),
            noise_std=float(s.get("noise_std", "0.1")),
            seed=int(s.get("seed", "0")),
        )
    if not specs:
        raise SynthError("generator file has no sections")
    return specs
