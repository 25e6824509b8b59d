"""Metrics, the Repeat baseline, zero-shot instruction selection and representation export."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import numerics as nx
from .data import Batch, DomainData, DomainSpec, WindowPool, gather
from .model import UniTime

log = logging.getLogger(__name__)

EVAL_BATCH = 256


class EvaluationError(ValueError):
    pass


def repeat_baseline(history, horizon: int) -> np.ndarray:
    """Forecast every future step as the last observed value. Works on [L] or [B, L]."""
    h = np.asarray(history, dtype=np.float64)
    if h.shape[-1] < 1:
        raise EvaluationError("repeat baseline needs at least one observation")
    return np.repeat(h[..., -1:], horizon, axis=-1)


def mse(pred: np.ndarray, target: np.ndarray) -> float:
    return float(np.mean((pred - target) ** 2))


def mae(pred: np.ndarray, target: np.ndarray) -> float:
    return float(np.mean(np.abs(pred - target)))


@dataclass
class MetricReport:
    rows: list[dict] = field(default_factory=list)

    def add(self, domain: str, horizon: int, pred: np.ndarray, target: np.ndarray,
            baseline: np.ndarray | None = None) -> None:
        row = {"domain": domain, "horizon": int(horizon), "mse": mse(pred, target), "mae": mae(pred, target)}
        if baseline is not None:
            row["repeat_mse"] = mse(baseline, target)
            row["repeat_mae"] = mae(baseline, target)
        self.rows.append(row)

    def domains(self) -> list[str]:
        return list(dict.fromkeys(r["domain"] for r in self.rows))

    def for_domain(self, domain: str) -> list[dict]:
        return [r for r in self.rows if r["domain"] == domain]

    def average(self, domain: str, key: str = "mse") -> float:
        vals = [r[key] for r in self.for_domain(domain)]
        return float(np.mean(vals))

    def records(self) -> list[dict]:
        out = list(self.rows)
        for d in self.domains():
            avg = {"domain": d, "horizon": "avg"}
            for key in ("mse", "mae", "repeat_mse", "repeat_mae"):
                if all(key in r for r in self.for_domain(d)):
                    avg[key] = self.average(d, key)
            out.append(avg)
        return out


def forecast_pool(model: UniTime, pool: WindowPool, spec: DomainSpec | None = None,
                  indices: np.ndarray | None = None, batch_size: int = EVAL_BATCH):
    """Masking-off forecasts for the windows of ``pool``; returns (pred, target, history)."""
    spec = spec or pool.spec
    idx = np.arange(len(pool)) if indices is None else np.asarray(indices, dtype=np.int64)
    preds, targets, hists = [], [], []
    with nx.no_grad():
        for start in range(0, idx.size, batch_size):
            batch = pool.batch(idx[start:start + batch_size])
            preds.append(model.forward(batch, spec).forecast.data)
            targets.append(batch.targets)
            hists.append(batch.inputs)
    if not preds:
        raise EvaluationError(f"domain {pool.spec.name!r}: no windows to evaluate")
    return np.concatenate(preds), np.concatenate(targets), np.concatenate(hists)


def evaluate(model: UniTime, data: DomainData, part: str = "test",
             horizons: Sequence[int] | None = None, exclude: Iterable[int] = ()) -> MetricReport:
    """MSE/MAE in standardised space, one forecast pass per window, prefix per horizon."""
    spec = data.spec
    pool = data.pool(part)
    if len(pool) == 0:
        raise EvaluationError(f"domain {spec.name!r}: empty {part} split")
    keep = np.setdiff1d(np.arange(len(pool)), np.fromiter(exclude, dtype=np.int64))
    pred, target, hist = forecast_pool(model, pool, indices=keep)
    report = MetricReport()
    horizons = list(horizons) if horizons else [spec.horizon]
    for t in horizons:
        if not 1 <= t <= spec.horizon:
            raise EvaluationError(f"horizon {t} outside 1..{spec.horizon} for domain {spec.name!r}")
        report.add(spec.name, t, pred[:, :t], target[:, :t], repeat_baseline(hist, t))
    return report


def validation_mse(model: UniTime, data: DomainData) -> float:
    pred, target, _ = forecast_pool(model, data.pool("val"))
    return mse(pred, target)


# -- zero-shot instruction selection ------------------------------------------

def fit_history(x: np.ndarray, length: int) -> np.ndarray:
    """Left-pad by repeating the first value, or keep the most recent ``length`` points."""
    x = np.atleast_2d(x)
    if x.shape[1] >= length:
        return x[:, x.shape[1] - length:]
    pad = np.repeat(x[:, :1], length - x.shape[1], axis=1)
    return np.concatenate([pad, x], axis=1)


@dataclass
class InstructionChoice:
    candidate: int
    domain: str
    instruction: str
    loss: float
    probe_fraction: float
    probe_indices: np.ndarray
    losses: list[float]

    def record(self) -> dict:
        return {
            "candidate": self.candidate,
            "domain": self.domain,
            "instruction": self.instruction,
            "loss": self.loss,
            "probe_fraction": self.probe_fraction,
            "probe_windows": int(self.probe_indices.size),
            "losses": self.losses,
        }


def probe_count(n_windows: int, fraction: float) -> int:
    return max(1, int(math.floor(n_windows * fraction)))


def zero_shot_spec(source: DomainSpec, horizon: int) -> DomainSpec:
    return replace(source, horizon=horizon)


def select_instruction(model: UniTime, pool: WindowPool, candidates: Sequence[DomainSpec],
                       rng: np.random.Generator, probe_fraction: float = 0.005,
                       split_ratio: float = 2.0 / 3.0) -> InstructionChoice:
    """Pick the training-domain instruction that best forecasts the tail of unseen histories.

    Each probe history is cut at floor(split_ratio * L); the head is fit to the
    candidate's lookback and fed with the candidate's instruction and stride,
    and the forecast is scored against the tail. Lowest mean loss wins; ties go
    to the earlier candidate.
    """
    if not candidates:
        raise EvaluationError("no candidate instructions")
    n = len(pool)
    if n == 0:
        raise EvaluationError("unseen data has no test windows")
    k = probe_count(n, probe_fraction)
    probe = np.sort(rng.choice(n, size=k, replace=False))
    hist, _ = gather(pool.data, pool.positions[probe], pool.channels[probe],
                     pool.spec.lookback, pool.spec.horizon)
    cut = int(math.floor(split_ratio * hist.shape[1]))
    tail = hist.shape[1] - cut
    if cut < 1 or tail < 1:
        log.warning("probe windows of length %d cannot be split at ratio %.3f; skipped", hist.shape[1], split_ratio)
        raise EvaluationError("all probe windows skipped: too short to split")
    head_part, tail_part = hist[:, :cut], hist[:, cut:]
    losses = []
    for cand in candidates:
        horizon = min(tail, model.config.max_horizon)
        spec = zero_shot_spec(cand, horizon)
        inputs = fit_history(head_part, cand.lookback)
        pred = model.predict(inputs, spec)
        losses.append(mse(pred, tail_part[:, :horizon]))
    best = int(np.argmin(losses))  # argmin returns the first minimum
    return InstructionChoice(best, candidates[best].name, candidates[best].instruction,
                             losses[best], probe_fraction, probe, losses)


def evaluate_zero_shot(model: UniTime, pool: WindowPool, source: DomainSpec,
                       exclude: Iterable[int] = ()) -> MetricReport:
    """Forecast the unseen windows with a chosen source domain's instruction/stride/lookback."""
    keep = np.setdiff1d(np.arange(len(pool)), np.fromiter(exclude, dtype=np.int64))
    if keep.size == 0:
        raise EvaluationError("no non-probe windows left to evaluate")
    horizon = pool.spec.horizon
    if horizon > model.config.max_horizon:
        raise EvaluationError(f"horizon {horizon} exceeds the model's max horizon {model.config.max_horizon}")
    spec = zero_shot_spec(source, horizon)
    preds, targets, hists = [], [], []
    for start in range(0, keep.size, EVAL_BATCH):
        b = pool.batch(keep[start:start + EVAL_BATCH])
        preds.append(model.predict(fit_history(b.inputs, source.lookback), spec))
        targets.append(b.targets)
        hists.append(b.inputs)
    report = MetricReport()
    hist = np.concatenate(hists)
    target = np.concatenate(targets)
    report.add(pool.spec.name, horizon, np.concatenate(preds), target, repeat_baseline(hist, horizon))
    return report


# -- representations ----------------------------------------------------------

def pooled_hidden(model: UniTime, batch: Batch, spec: DomainSpec) -> np.ndarray:
    with nx.no_grad():
        res = model.forward(batch, spec)
    return res.trace.hidden.mean(axis=1)


def export_representations(model: UniTime, domains: Mapping[str, DomainData], samples: int,
                           rng: np.random.Generator) -> tuple[list[tuple[str, np.ndarray]], float]:
    """Mean-pooled backbone outputs for ``samples`` random test windows per domain, plus separation score."""
    table: list[tuple[str, np.ndarray]] = []
    for name, data in domains.items():
        pool = data.pool("test")
        if len(pool) == 0:
            continue
        k = min(samples, len(pool))
        idx = np.sort(rng.choice(len(pool), size=k, replace=False))
        vecs = pooled_hidden(model, pool.batch(idx), data.spec)
        table.extend((name, v) for v in vecs)
    labels = [d for d, _ in table]
    score = separation_score(np.array([v for _, v in table]), labels) if len(set(labels)) > 1 else float("nan")
    return table, score


def separation_score(vectors: np.ndarray, labels: Sequence[str]) -> float:
    """Mean distance from each point to the other domains' centroids over mean distance to its own.

    Values near 1 mean the domains are mixed; larger means clustered by domain.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    labels = np.asarray(labels)
    names = list(dict.fromkeys(labels.tolist()))
    if len(names) < 2:
        raise EvaluationError("separation score needs at least two domains")
    centroids = {d: vectors[labels == d].mean(axis=0) for d in names}
    intra, inter = [], []
    for d in names:
        pts = vectors[labels == d]
        intra.append(np.linalg.norm(pts - centroids[d], axis=1))
        for o in names:
            if o != d:
                inter.append(np.linalg.norm(pts - centroids[o], axis=1))
    denom = float(np.mean(np.concatenate(intra)))
    num = float(np.mean(np.concatenate(inter)))
    if denom == 0.0:
        return float("inf") if num > 0 else 1.0
    return num / denom
