"""``unitime`` command line: train, evaluate, zeroshot, synth, export-repr."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from .config import ConfigKeyError, apply_ablations, dump_config, load_config
from .data import DataError, DomainData, DomainSpec, read_csv, split_array
from .evaluation import EvaluationError, evaluate, evaluate_zero_shot, export_representations, select_instruction
from .model import ConfigError
from .pipeline import load_domains, model_from_checkpoint, run_training, write_default_suite
from .synth import SynthError, generate, parse_generator_file
from .training import TrainingDiverged

log = logging.getLogger("unitime")

EXIT_CONFIG = 2
EXIT_DIVERGED = 3
SEED_ENV = "UNITIME_SEED"
DEFAULT_CLIP = 5.0


def _emit(record: dict) -> None:
    print(json.dumps(record, sort_keys=True))


def _seed(arg: int | None, default: int) -> int:
    if arg is not None:
        return arg
    env = os.environ.get(SEED_ENV)
    return int(env) if env else default


def cmd_train(args) -> int:
    try:
        cfg, text = load_config(args.config)
        model_cfg = apply_ablations(cfg.model, args.ablation, args.tunability)
        cfg = replace(cfg, model=model_cfg)
        seed = _seed(args.seed, cfg.train.seed)
        cfg = replace(cfg, train=replace(cfg.train, seed=seed))
        if args.clip_norm is not None:
            cfg = replace(cfg, train=replace(cfg.train, clip_norm=args.clip_norm))
    except ConfigKeyError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error: model: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        result = run_training(cfg, source_text=text)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        (out / "runlog.jsonl").write_text(exc.runlog.to_jsonl(), encoding="utf-8")
        return EXIT_DIVERGED
    ckpt_io.save(out / "checkpoint.bin", result.checkpoint)
    (out / "runlog.jsonl").write_text(result.runlog.to_jsonl(), encoding="utf-8")
    (out / "config.resolved.ini").write_text(dump_config(cfg), encoding="utf-8")
    _emit({"selected_epoch": result.runlog.selected_epoch,
           "mean_val": result.runlog.mean_val[result.runlog.selected_epoch],
           "checkpoint": str(out / "checkpoint.bin")})
    return 0


def _parse_ints(text: str | None) -> list[int] | None:
    if not text:
        return None
    return [int(t) for t in text.split(",") if t.strip()]


def cmd_evaluate(args) -> int:
    model, cfg = model_from_checkpoint(ckpt_io.load(args.checkpoint))
    names = [d.name for d in cfg.domains]
    if args.domain and args.domain not in names:
        print(f"unknown domain {args.domain!r}; checkpoint has {names}", file=sys.stderr)
        return EXIT_CONFIG
    specs = [d for d in cfg.domains if not args.domain or d.name == args.domain]
    for name, data in load_domains(specs).items():
        for rec in evaluate(model, data, horizons=_parse_ints(args.horizons)).records():
            _emit(rec)
    return 0


def cmd_zeroshot(args) -> int:
    model, cfg = model_from_checkpoint(ckpt_io.load(args.checkpoint))
    if args.candidates == "all":
        cands = list(cfg.domains)
    else:
        wanted = [c.strip() for c in args.candidates.split(",") if c.strip()]
        unknown = [c for c in wanted if c not in {d.name for d in cfg.domains}]
        if unknown:
            print(f"unknown candidate domains {unknown}", file=sys.stderr)
            return EXIT_CONFIG
        cands = [cfg.domain(c) for c in wanted]
    lookback = args.lookback or int(1.5 * max(c.lookback for c in cands))
    horizon = args.horizon or max(c.horizon for c in cands)
    raw = read_csv(args.data)
    spec = DomainSpec("unseen", "", raw.shape[1], lookback, horizon, 1, str(args.data))
    pool = DomainData(split_array(spec, raw)).pool("test")
    rng = np.random.default_rng(_seed(args.seed, cfg.train.seed))
    choice = select_instruction(model, pool, cands, rng, cfg.eval.probe_fraction, cfg.eval.split_ratio)
    _emit({"choice": choice.record()})
    report = evaluate_zero_shot(model, pool, cands[choice.candidate], exclude=choice.probe_indices)
    for rec in report.records():
        _emit(rec)
    return 0


def cmd_synth(args) -> int:
    out = Path(args.out)
    seed = _seed(args.seed, 0)
    if args.spec:
        out.mkdir(parents=True, exist_ok=True)
        specs = parse_generator_file(Path(args.spec).read_text(encoding="utf-8"))
        for name, gen in specs.items():
            if args.seed is not None or os.environ.get(SEED_ENV):
                gen = replace(gen, seed=seed)
            path = generate(gen, out / f"{name}.csv")
            _emit({"file": str(path), "rows": gen.rows, "channels": gen.channels})
        return 0
    specs, cfg_path = write_default_suite(out, seed)
    for s in specs:
        _emit({"file": s.csv_path, "domain": s.name, "channels": s.channels})
    _emit({"config": str(cfg_path)})
    return 0


def cmd_export_repr(args) -> int:
    model, cfg = model_from_checkpoint(ckpt_io.load(args.checkpoint))
    rng = np.random.default_rng(_seed(args.seed, cfg.train.seed))
    table, score = export_representations(model, load_domains(cfg.domains), args.samples, rng)
    lines = ["domain\t" + "\t".join(f"h{i}" for i in range(model.config.d_model))]
    lines += [name + "\t" + "\t".join(repr(float(x)) for x in vec) for name, vec in table]
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    _emit({"rows": len(table), "separation_score": score, "table": str(args.out)})
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="unitime", description="Cross-domain time-series forecaster.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train on every domain in a config")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int, help=f"overrides [train] seed; falls back to ${SEED_ENV}")
    t.add_argument("--out", required=True)
    t.add_argument("--ablation", help="comma-separated: no_instructions, no_masking, no_light_trans, "
                                      "no_reconstruction, ts_text_order, all")
    t.add_argument("--tunability", choices=("full", "freeze", "fpt"))
    t.add_argument("--clip-norm", type=float, nargs="?", const=DEFAULT_CLIP,
                   help=f"clip gradients to this global norm (bare flag: {DEFAULT_CLIP})")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="test-split metrics with the Repeat baseline")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--domain")
    e.add_argument("--horizons", help="comma-separated prefix lengths, e.g. 12,24")
    e.set_defaults(func=cmd_evaluate)

    z = sub.add_parser("zeroshot", help="pick an instruction for unseen data and evaluate")
    z.add_argument("--checkpoint", required=True)
    z.add_argument("--data", required=True)
    z.add_argument("--candidates", default="all")
    z.add_argument("--lookback", type=int, help="window length of the unseen data (default 1.5x the longest "
                                                "candidate lookback)")
    z.add_argument("--horizon", type=int, help="default: longest candidate horizon")
    z.add_argument("--seed", type=int)
    z.set_defaults(func=cmd_zeroshot)

    s = sub.add_parser("synth", help="write synthetic CSVs")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--suite", choices=("default",))
    g.add_argument("--spec", help="INI generator file, one section per CSV")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    x = sub.add_parser("export-repr", help="pooled backbone outputs and separation score")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--out", required=True)
    x.add_argument("--samples", type=int, default=100)
    x.add_argument("--seed", type=int)
    x.set_defaults(func=cmd_export_repr)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigKeyError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, EvaluationError, SynthError, ckpt_io.CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
