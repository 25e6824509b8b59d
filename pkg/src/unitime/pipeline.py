"""High-level glue shared by the CLI and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import checkpoint as ckpt_io
from .config import RunConfig, dump_config, parse_config
from .data import Batch, DomainData, DomainSpec, load_domain
from .model import ModelConfig, UniTime, validate_domains
from .numerics import Tensor
from .synth import default_suite, write_suite
from .textinstr import Vocabulary, build_vocabulary
from .training import RunLog, train

# desk-scale model/train settings used for the synthetic suite
SUITE_MODEL = ModelConfig(d_model=32, n_heads=4, n_layers=2, n_light_layers=1, patch_len=16,
                          max_tokens=17, max_horizon=48, max_recon=96, mask_ratio=0.5)


def suite_run_config(specs: Sequence[DomainSpec], epochs: int = 10, lr: float = 3e-4,
                     batch_size: int = 32, seed: int = 0) -> RunConfig:
    cfg = RunConfig(model=SUITE_MODEL, domains=list(specs))
    cfg.train = replace(cfg.train, epochs=epochs, lr=lr, batch_size=batch_size, seed=seed)
    return cfg


def write_default_suite(out_dir: str | Path, seed: int = 0) -> tuple[list[DomainSpec], Path]:
    """Write the default CSVs plus a ready-to-train ``suite.ini`` next to them."""
    out_dir = Path(out_dir)
    specs = write_suite(out_dir, default_suite(seed))
    rel = [replace(s, csv_path=Path(s.csv_path).name) for s in specs]
    cfg_path = out_dir / "suite.ini"
    cfg_path.write_text(dump_config(suite_run_config(rel)), encoding="utf-8")
    return specs, cfg_path


def load_domains(specs: Sequence[DomainSpec]) -> dict[str, DomainData]:
    return {s.name: DomainData(load_domain(s)) for s in specs}


def build_model(cfg: RunConfig, rng: np.random.Generator) -> UniTime:
    vocab = build_vocabulary([d.instruction for d in cfg.domains])
    model_cfg = ModelConfig.from_dict({**cfg.model.to_dict(), "vocab_size": len(vocab)})
    validate_domains(model_cfg, cfg.domains)
    return UniTime.create(model_cfg, vocab, rng)


@dataclass
class TrainResult:
    model: UniTime
    runlog: RunLog
    checkpoint: ckpt_io.Checkpoint
    domains: dict[str, DomainData]


def run_training(cfg: RunConfig, seed: int | None = None, source_text: str | None = None,
                 domains: dict[str, DomainData] | None = None,
                 on_batch: Callable[[Batch], None] | None = None) -> TrainResult:
    """Train from a run config; the returned model holds the selected (best-epoch) parameters."""
    if seed is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=seed))
    rng = np.random.default_rng(cfg.train.seed)
    domains = domains if domains is not None else load_domains(cfg.domains)
    model = build_model(cfg, rng)
    best, runlog = train(domains, model, cfg.train, rng, on_batch=on_batch)
    model.load_arrays(best)
    meta = {
        "seed": cfg.train.seed,
        "selected_epoch": runlog.selected_epoch,
        "mean_val": runlog.mean_val,
        "config_source": source_text if source_text is not None else "",
    }
    ckpt = ckpt_io.from_model(model, dump_config(cfg), meta)
    return TrainResult(model, runlog, ckpt, domains)


def model_from_checkpoint(ckpt: ckpt_io.Checkpoint) -> tuple[UniTime, RunConfig]:
    cfg = parse_config(ckpt.config_text)
    vocab = Vocabulary(ckpt.vocab)
    model_cfg = ModelConfig.from_dict({**cfg.model.to_dict(), "vocab_size": len(vocab)})
    params = {k: Tensor(v, requires_grad=True, name=k) for k, v in ckpt.tensors.items()}
    return UniTime(model_cfg, vocab, params), cfg
