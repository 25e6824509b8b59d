"""Run configuration files.

A flat INI file with sections ``[model]``, ``[train]``, ``[eval]`` and one
``[domain.<name>]`` section per domain. Every key is checked against the
schema; unknown keys and sections are errors. Relative ``csv_path`` values
resolve against the config file's directory.

Example::

    [model]
    d_model = 32
    max_horizon = 48

    [train]
    epochs = 20
    lr = 0.001

    [eval]
    probe_fraction = 0.005

    [domain.D1]
    instruction = hourly sensor readings with strong daily seasonal cycles
    channels = 3
    lookback = 96
    horizon = 48
    stride = 16
    csv_path = D1.csv
"""

from __future__ import annotations

import configparser
import dataclasses
import types
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path

from .data import DomainSpec
from .model import ModelConfig
from .training import TrainConfig

DOMAIN_PREFIX = "domain."
DERIVED_MODEL_KEYS = {"vocab_size"}


class ConfigKeyError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class EvalConfig:
    probe_fraction: float = 0.005
    split_ratio: float = 2.0 / 3.0


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    domains: list[DomainSpec] = field(default_factory=list)

    def domain(self, name: str) -> DomainSpec:
        for d in self.domains:
            if d.name == name:
                return d
        raise KeyError(name)


def _field_types(cls) -> dict[str, type]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in fields(cls)}


def _coerce(key: str, raw: str, typ) -> object:
    raw = raw.strip()
    origin = typing.get_origin(typ)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(typ) if a is not type(None)]
        if raw.lower() in ("", "none"):
            return None
        typ = args[0]
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigKeyError(key, f"cannot parse {raw!r} as {getattr(typ, '__name__', typ)}") from None


def _section(cp: configparser.ConfigParser, name: str, cls, skip: set[str] = frozenset()) -> dict:
    types = _field_types(cls)
    out = {}
    if not cp.has_section(name):
        return out
    for key, raw in cp.items(name, raw=True):
        if key not in types or key in skip:
            raise ConfigKeyError(f"{name}.{key}", "unknown key")
        out[key] = _coerce(f"{name}.{key}", raw, types[key])
    return out


def parse_config(text: str, base_dir: str | Path = ".") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="\x00unused")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigKeyError("<file>", str(exc).splitlines()[0]) from None
    for sec in cp.sections():
        if sec not in ("model", "train", "eval") and not sec.startswith(DOMAIN_PREFIX):
            raise ConfigKeyError(sec, "unknown section")
    try:
        model = ModelConfig(**_section(cp, "model", ModelConfig, DERIVED_MODEL_KEYS))
        train = TrainConfig(**_section(cp, "train", TrainConfig))
        ev = EvalConfig(**_section(cp, "eval", EvalConfig))
    except ConfigKeyError:
        raise
    except ValueError as exc:
        raise ConfigKeyError("<value>", str(exc)) from None
    domains = []
    required = [f.name for f in fields(DomainSpec) if f.name != "name"]
    for sec in cp.sections():
        if not sec.startswith(DOMAIN_PREFIX):
            continue
        name = sec[len(DOMAIN_PREFIX):]
        values = _section(cp, sec, DomainSpec, {"name"})
        missing = [k for k in required if k not in values]
        if missing:
            raise ConfigKeyError(f"{sec}.{missing[0]}", "missing key")
        path = Path(values["csv_path"])
        if not path.is_absolute():
            path = (Path(base_dir) / path).resolve()
        values["csv_path"] = str(path)
        try:
            domains.append(DomainSpec(name=name, **values))
        except ValueError as exc:
            raise ConfigKeyError(sec, str(exc)) from None
    if not domains:
        raise ConfigKeyError("domain", "at least one [domain.<name>] section is required")
    return RunConfig(model, train, ev, domains)


def load_config(path: str | Path) -> tuple[RunConfig, str]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    return parse_config(text, path.parent), text


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(cfg: RunConfig) -> str:
    """Canonical text form; parse_config(dump_config(c)) == c."""
    lines = ["[model]"]
    for k, v in dataclasses.asdict(cfg.model).items():
        if k not in DERIVED_MODEL_KEYS:
            lines.append(f"{k} = {_fmt(v)}")
    for sec, obj in (("train", cfg.train), ("eval", cfg.eval)):
        lines += ["", f"[{sec}]"]
        lines += [f"{k} = {_fmt(v)}" for k, v in dataclasses.asdict(obj).items()]
    for d in cfg.domains:
        lines += ["", f"[{DOMAIN_PREFIX}{d.name}]"]
        lines += [f"{k} = {_fmt(v)}" for k, v in dataclasses.asdict(d).items() if k != "name"]
    return "\n".join(lines) + "\n"


ABLATIONS = {
    "no_instructions": ("use_instructions", False),
    "no_masking": ("use_masking", False),
    "no_light_trans": ("use_light_trans", False),
    "no_reconstruction": ("use_reconstruction", False),
    "ts_text_order": ("ts_text_order", True),
}


def apply_ablations(model: ModelConfig, flags: str | None, tunability: str | None = None) -> ModelConfig:
    """Comma-separated ablation names (``all`` turns off every design component)."""
    d = model.to_dict()
    for flag in [f.strip() for f in (flags or "").split(",") if f.strip()]:
        if flag == "all":
            for name in ("no_instructions", "no_masking", "no_light_trans", "no_reconstruction"):
                key, value = ABLATIONS[name]
                d[key] = value
        elif flag in ABLATIONS:
            key, value = ABLATIONS[flag]
            d[key] = value
        else:
            raise ConfigKeyError("--ablation", f"unknown ablation {flag!r}; choose from {sorted(ABLATIONS)} or all")
    if tunability is not None:
        d["tunability"] = tunability
    return ModelConfig.from_dict(d)
