"""Joint forecast/reconstruction objective, tunability modes and the cross-domain training loop."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import numerics as nx
from .data import Batch, DomainData, sample_batches
from .evaluation import validation_mse
from .model import TUNABILITY_MODES, ConfigError, UniTime
from .numerics import AdamWState, NonFiniteGradientError, Tensor, adamw_step, clip_grad_norm

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Loss or gradient went non-finite; carries the last good parameters."""

    def __init__(self, message: str, last_good: dict[str, np.ndarray], runlog: "RunLog"):
        super().__init__(message)
        self.last_good = last_good
        self.runlog = runlog


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-4
    weight_decay: float = 0.01
    oversampling: float = 0.5
    seed: int = 0
    clip_norm: float | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


def loss(forecasts: Tensor, targets: np.ndarray, reconstructions: Tensor | None, histories: np.ndarray,
         channels: np.ndarray | None = None, use_reconstruction: bool = True, domain: str = "?") -> Tensor:
    """Per-row ||y^-y||^2/T (+ ||x^-x||^2/L), averaged within each channel, then across channels.

    With ``channels`` omitted every row counts as its own channel.
    """
    targets = np.asarray(targets, dtype=np.float64)
    histories = np.asarray(histories, dtype=np.float64)
    for label, arr in (("forecast", forecasts.data), ("target", targets),
                       ("reconstruction", None if reconstructions is None else reconstructions.data),
                       ("history", histories)):
        if arr is not None and not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"non-finite {label} values in domain {domain!r}")
    b, t = targets.shape
    row = nx.mul(nx.sum_(nx.square(nx.sub(forecasts, targets)), axis=1), 1.0 / t)
    if use_reconstruction:
        if reconstructions is None:
            raise ValueError("reconstruction term requested without reconstructions")
        lookback = histories.shape[1]
        rec = nx.mul(nx.sum_(nx.square(nx.sub(reconstructions, histories)), axis=1), 1.0 / lookback)
        row = nx.add(row, rec)
    if channels is None:
        channels = np.arange(b)
    channels = np.asarray(channels)
    uniq, inverse, counts = np.unique(channels, return_inverse=True, return_counts=True)
    weights = 1.0 / (counts[inverse] * uniq.size)
    return nx.sum_(nx.mul(row, weights))


def is_backbone(name: str) -> bool:
    return name.startswith("backbone.")


def apply_tunability(params: Mapping[str, Tensor], mode: str) -> set[str]:
    """Mark parameters trainable per mode and return the trainable names.

    full: everything. freeze: backbone layers and positional table frozen.
    fpt: inside the backbone only the positional table and layer-norm scale/shift train.
    """
    if mode not in TUNABILITY_MODES:
        raise ConfigError(f"unknown tunability mode {mode!r}")
    trainable = set()
    for name, p in params.items():
        if not is_backbone(name) or mode == "full":
            ok = True
        elif mode == "freeze":
            ok = False
        else:
            ok = name == "backbone.pos" or ".ln1." in name or ".ln2." in name
        p.requires_grad = ok
        if ok:
            trainable.add(name)
    return trainable


@dataclass
class RunLog:
    records: list[dict] = field(default_factory=list)
    mean_val: list[float] = field(default_factory=list)
    selected_epoch: int = -1
    wall_clock: float = 0.0
    batch_domains: dict[str, int] = field(default_factory=dict)

    def add(self, epoch: int, domain: str, split: str, value: float, metric: str = "loss") -> None:
        self.records.append({"epoch": epoch, "domain": domain, "split": split, "metric": metric, "value": value})

    def curve(self, domain: str, split: str = "val") -> list[float]:
        return [r["value"] for r in self.records if r["domain"] == domain and r["split"] == split]

    def to_jsonl(self) -> str:
        lines = [json.dumps(r, sort_keys=True) for r in self.records]
        lines += [json.dumps({"epoch": e, "domain": "*", "split": "val", "metric": "mean_loss", "value": v},
                             sort_keys=True) for e, v in enumerate(self.mean_val)]
        lines.append(json.dumps({"selected_epoch": self.selected_epoch, "wall_clock": self.wall_clock,
                                 "batch_domains": self.batch_domains}, sort_keys=True))
        return "\n".join(lines) + "\n"


def _validate(model: UniTime, domains: Mapping[str, DomainData], epoch: int, runlog: RunLog) -> float:
    vals = []
    for name, data in domains.items():
        v = validation_mse(model, data)
        runlog.add(epoch, name, "val", v)
        vals.append(v)
    mean = float(np.mean(vals))
    runlog.mean_val.append(mean)
    return mean


def train_step(model: UniTime, batch: Batch, spec, opt: AdamWState, trainable: set[str],
               clip: float | None = None) -> float:
    model.zero_grad()
    res = model.forward(batch, spec, training=True)
    recon = res.reconstruction if model.config.use_reconstruction else None
    value = loss(res.forecast, batch.targets, recon, batch.inputs, batch.channels,
                 model.config.use_reconstruction, domain=spec.name)
    if not np.isfinite(value.data):
        raise FloatingPointError(f"non-finite training loss in domain {spec.name!r}")
    nx.backward(value)
    live = {k: model.params[k] for k in trainable}
    if clip is not None:
        clip_grad_norm(live, clip)
    adamw_step(live, opt)
    return float(value.data)


def train(domains: Mapping[str, DomainData], model: UniTime, config: TrainConfig,
          rng: np.random.Generator,
          on_batch: Callable[[Batch], None] | None = None) -> tuple[dict[str, np.ndarray], RunLog]:
    """Cross-domain training with mean-validation model selection.

    Epoch 0 in the log is the untrained model. Returns the parameters of the
    epoch with the lowest unweighted mean validation MSE, and the run log.
    """
    if not domains:
        raise ValueError("train needs at least one domain")
    start = time.perf_counter()
    trainable = apply_tunability(model.params, model.config.tunability)
    opt = AdamWState(lr=config.lr, weight_decay=config.weight_decay)
    pools = {name: d.pool("train") for name, d in domains.items()}
    runlog = RunLog(batch_domains={name: 0 for name in domains})
    best = _validate(model, domains, 0, runlog)
    best_params = {k: v.copy() for k, v in model.named_arrays().items()}
    runlog.selected_epoch = 0
    for epoch in range(1, config.epochs + 1):
        sums = {name: [0.0, 0] for name in domains}
        for batch in sample_batches(pools, config.batch_size, config.oversampling, rng,
                                    model.config.mask_ratio if model.config.use_masking else 0.0):
            if on_batch is not None:
                on_batch(batch)
            runlog.batch_domains[batch.domain] += 1
            try:
                value = train_step(model, batch, domains[batch.domain].spec, opt, trainable, config.clip_norm)
            except (FloatingPointError, NonFiniteGradientError) as exc:
                runlog.wall_clock = time.perf_counter() - start
                raise TrainingDiverged(f"epoch {epoch}: {exc}", best_params, runlog) from exc
            sums[batch.domain][0] += value
            sums[batch.domain][1] += 1
        for name, (total, count) in sums.items():
            if count:
                runlog.add(epoch, name, "train", total / count)
        mean_val = _validate(model, domains, epoch, runlog)
        log.info("epoch %d mean val %.5f", epoch, mean_val)
        if mean_val < best:
            best = mean_val
            best_params = {k: v.copy() for k, v in model.named_arrays().items()}
            runlog.selected_epoch = epoch
    runlog.wall_clock = time.perf_counter() - start
    return best_params, runlog


def train_config_dict(config: TrainConfig) -> dict:
    return asdict(config)
