"""The UniTime network.

Per row (channel independence) the pipeline is: mask -> stationarise ->
repeat-pad -> patch -> project -> gated fusion with the mask embedding ->
prepend instruction embeddings -> causal transformer backbone -> append pad
tokens up to R -> light (full-attention) transformer -> flatten -> linear
heads truncated to the domain's horizon / lookback -> de-stationarise.
All rows of a batch share one domain, so the whole batch runs as [B, S, D].
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Mapping, Sequence

import numpy as np

from . import numerics as nx
from .data import Batch, DomainSpec
from .numerics import Tensor
from .textinstr import Vocabulary, encode_instruction, instruction_length

STATIONARY_EPS = 1e-5
INIT_STD = 0.02
TUNABILITY_MODES = ("full", "freeze", "fpt")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    d_model: int = 32
    n_heads: int = 4
    n_layers: int = 6
    n_light_layers: int = 2
    patch_len: int = 16
    max_tokens: int = 17
    max_horizon: int = 720
    max_recon: int = 96
    mask_ratio: float = 0.5
    mlp_ratio: int = 4
    vocab_size: int = 0
    use_instructions: bool = True
    use_masking: bool = True
    use_light_trans: bool = True
    use_reconstruction: bool = True
    ts_text_order: bool = False
    tunability: str = "full"

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.tunability not in TUNABILITY_MODES:
            raise ConfigError(f"tunability must be one of {TUNABILITY_MODES}, got {self.tunability!r}")
        if not 0.0 <= self.mask_ratio < 1.0:
            raise ConfigError(f"mask_ratio must be in [0, 1), got {self.mask_ratio}")
        for name in ("d_model", "n_heads", "patch_len", "max_tokens", "max_horizon", "max_recon", "mlp_ratio"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.n_layers < 0 or self.n_light_layers < 0:
            raise ConfigError("layer counts must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def token_count(lookback: int, patch_len: int, stride: int) -> int:
    """Number of patches: ceil((L - P) / S) + 1."""
    if lookback < patch_len:
        raise ConfigError(f"lookback {lookback} shorter than patch length {patch_len}")
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    return -(-(lookback - patch_len) // stride) + 1


def padded_length(lookback: int, patch_len: int, stride: int) -> int:
    return (token_count(lookback, patch_len, stride) - 1) * stride + patch_len


def sequence_length(config: ModelConfig, spec: DomainSpec) -> int:
    n = token_count(spec.lookback, config.patch_len, spec.stride)
    i = instruction_length(spec.instruction) if config.use_instructions else 0
    return i + n


def validate_domains(config: ModelConfig, domains: Sequence[DomainSpec]) -> None:
    """Startup checks so nothing fails mid-training."""
    for spec in domains:
        seq = sequence_length(config, spec)
        if seq > config.max_tokens:
            raise ConfigError(
                f"domain {spec.name!r}: instruction+series tokens {seq} exceed max_tokens R={config.max_tokens}")
        if spec.horizon > config.max_horizon:
            raise ConfigError(
                f"domain {spec.name!r}: horizon {spec.horizon} exceeds max_horizon O={config.max_horizon}")
        if spec.lookback > config.max_recon:
            raise ConfigError(
                f"domain {spec.name!r}: lookback {spec.lookback} exceeds max_recon L_max={config.max_recon}")


# -- parameters ---------------------------------------------------------------

def _layer_shapes(prefix: str, d: int, hidden: int) -> list[tuple[str, tuple[int, ...], str]]:
    return [
        (f"{prefix}.attn.qkv.weight", (d, 3 * d), "normal"),
        (f"{prefix}.attn.qkv.bias", (3 * d,), "zeros"),
        (f"{prefix}.attn.out.weight", (d, d), "normal"),
        (f"{prefix}.attn.out.bias", (d,), "zeros"),
        (f"{prefix}.ln1.scale", (d,), "ones"),
        (f"{prefix}.ln1.shift", (d,), "zeros"),
        (f"{prefix}.mlp.fc.weight", (d, hidden), "normal"),
        (f"{prefix}.mlp.fc.bias", (hidden,), "zeros"),
        (f"{prefix}.mlp.proj.weight", (hidden, d), "normal"),
        (f"{prefix}.mlp.proj.bias", (d,), "zeros"),
        (f"{prefix}.ln2.scale", (d,), "ones"),
        (f"{prefix}.ln2.shift", (d,), "zeros"),
    ]


def parameter_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, ...], str]]:
    d, p, r = config.d_model, config.patch_len, config.max_tokens
    hidden = config.mlp_ratio * d
    shapes = [
        ("tokenizer.patch_proj", (p, d), "normal"),
        ("tokenizer.mask_proj", (p, d), "normal"),
        ("fusion.w_series", (d, d), "normal"),
        ("fusion.w_mask", (d, d), "normal"),
        ("fusion.bias", (d,), "zeros"),
        ("instruction.embedding", (config.vocab_size, d), "normal"),
        ("backbone.pos", (r, d), "normal"),
    ]
    for i in range(config.n_layers):
        shapes += _layer_shapes(f"backbone.layers.{i}", d, hidden)
    shapes.append(("decoder.pad", (d,), "normal"))
    for i in range(config.n_light_layers):
        shapes += _layer_shapes(f"decoder.light.{i}", d, hidden)
    shapes += [
        ("decoder.forecast_head.weight", (r * d, config.max_horizon), "normal"),
        ("decoder.forecast_head.bias", (config.max_horizon,), "zeros"),
        ("decoder.recon_head.weight", (r * d, config.max_recon), "normal"),
        ("decoder.recon_head.bias", (config.max_recon,), "zeros"),
    ]
    return shapes


def init_params(config: ModelConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    if config.vocab_size < 2:
        raise ConfigError("vocab_size must be set (>= 2) before initialising parameters")
    params = {}
    for name, shape, kind in parameter_shapes(config):
        if kind == "normal":
            value = rng.normal(0.0, INIT_STD, size=shape)
        elif kind == "ones":
            value = np.ones(shape)
        else:
            value = np.zeros(shape)
        params[name] = Tensor(value, requires_grad=True, name=name)
    return params


# -- stages -------------------------------------------------------------------

@dataclass
class SeriesStats:
    mean: np.ndarray      # [B, 1]
    std: np.ndarray       # [B, 1]
    fallback: np.ndarray  # [B] rows that were fully masked


def stationarize(x: np.ndarray, m: np.ndarray) -> tuple[np.ndarray, SeriesStats]:
    """Normalise each row by statistics of its observed (m=1) positions; masked positions become 0."""
    count = m.sum(axis=1, keepdims=True)
    empty = count[:, 0] == 0
    safe = np.where(count == 0, 1.0, count)
    mu = (x * m).sum(axis=1, keepdims=True) / safe
    var = (m * (x - mu) ** 2).sum(axis=1, keepdims=True) / safe
    sd = np.sqrt(var + STATIONARY_EPS)
    mu = np.where(empty[:, None], 0.0, mu)
    sd = np.where(empty[:, None], 1.0, sd)
    z = (x - mu) / sd * m
    return z, SeriesStats(mu, sd, empty)


def destationarize(y: np.ndarray, stats: SeriesStats) -> np.ndarray:
    return y * stats.std + stats.mean


def repeat_pad(x: np.ndarray, length: int) -> np.ndarray:
    """Right-pad the last axis to ``length`` by repeating its final value."""
    extra = length - x.shape[-1]
    if extra <= 0:
        return x
    tail = np.repeat(x[..., -1:], extra, axis=-1)
    return np.concatenate([x, tail], axis=-1)


def patchify(x: np.ndarray, patch_len: int, stride: int) -> np.ndarray:
    """[B, Lpad] -> [B, N, P] windows starting every ``stride`` steps."""
    n = (x.shape[-1] - patch_len) // stride + 1
    idx = np.arange(n)[:, None] * stride + np.arange(patch_len)[None, :]
    return x[..., idx]


def tokenize_series(x: np.ndarray, m: np.ndarray, patch_len: int, stride: int):
    """Mask, stationarise, repeat-pad and patch a batch of univariate series.

    Returns (series patches [B, N, P], mask patches [B, N, P], stats).
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    if x.shape != m.shape:
        raise nx.ShapeError(f"series {x.shape} and mask {m.shape} differ")
    lookback = x.shape[-1]
    total = padded_length(lookback, patch_len, stride)
    z, stats = stationarize(x * m, m)
    z = repeat_pad(z, total)
    mp = repeat_pad(m, total)
    return patchify(z, patch_len, stride), patchify(mp, patch_len, stride), stats


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    y = nx.matmul(x, weight)
    if bias is not None:
        y = nx.add(y, nx.broadcast_to(bias, y.shape))
    return y


def embed_and_fuse(z_patches, m_patches, params: Mapping[str, Tensor]) -> Tensor:
    """Project series and mask patches to [B, N, D] and blend them with a sigmoid gate."""
    z = nx.matmul(nx.as_tensor(z_patches), params["tokenizer.patch_proj"])
    mm = nx.matmul(nx.as_tensor(m_patches), params["tokenizer.mask_proj"])
    pre = nx.add(nx.matmul(z, params["fusion.w_series"]), nx.matmul(mm, params["fusion.w_mask"]))
    gate = nx.sigmoid(nx.add(pre, nx.broadcast_to(params["fusion.bias"], pre.shape)))
    return nx.add(nx.mul(gate, z), nx.mul(nx.sub(1.0, gate), mm))


def causal_mask(n: int) -> np.ndarray:
    """True where the key comes after the query (blocked)."""
    return np.triu(np.ones((n, n), dtype=bool), k=1)


def self_attention(x: Tensor, params: Mapping[str, Tensor], prefix: str, n_heads: int,
                   causal: bool, record: list | None = None) -> Tensor:
    b, s, d = x.shape
    dk = d // n_heads
    qkv = linear(x, params[f"{prefix}.attn.qkv.weight"], params[f"{prefix}.attn.qkv.bias"])

    def heads(t: Tensor) -> Tensor:
        return nx.transpose(nx.reshape(t, (b, s, n_heads, dk)), (0, 2, 1, 3))

    q = heads(qkv[:, :, 0:d])
    k = heads(qkv[:, :, d:2 * d])
    v = heads(qkv[:, :, 2 * d:3 * d])
    scores = nx.mul(nx.matmul(q, nx.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dk))
    if causal:
        blocked = np.broadcast_to(causal_mask(s), scores.shape)
        scores = nx.masked_fill(scores, blocked, -np.inf)
    att = nx.softmax(scores, axis=-1)
    if record is not None:
        record.append(att.data)
    ctx = nx.reshape(nx.transpose(nx.matmul(att, v), (0, 2, 1, 3)), (b, s, d))
    return linear(ctx, params[f"{prefix}.attn.out.weight"], params[f"{prefix}.attn.out.bias"])


def transformer_layer(x: Tensor, params: Mapping[str, Tensor], prefix: str, n_heads: int,
                      causal: bool, record: list | None = None) -> Tensor:
    # norm is applied to each sublayer's output, then the residual is added
    a = self_attention(x, params, prefix, n_heads, causal, record)
    h = nx.add(nx.layer_norm(a, params[f"{prefix}.ln1.scale"], params[f"{prefix}.ln1.shift"]), x)
    f = nx.gelu(linear(h, params[f"{prefix}.mlp.fc.weight"], params[f"{prefix}.mlp.fc.bias"]))
    f = linear(f, params[f"{prefix}.mlp.proj.weight"], params[f"{prefix}.mlp.proj.bias"])
    return nx.add(nx.layer_norm(f, params[f"{prefix}.ln2.scale"], params[f"{prefix}.ln2.shift"]), h)


def backbone_forward(instr: Tensor | None, series: Tensor, params: Mapping[str, Tensor],
                     config: ModelConfig, record: list | None = None) -> Tensor:
    """Language-TS transformer over (instruction || series) tokens, causal attention.

    ``instr`` is [I, D] (shared by every row) or None; ``series`` is [B, N, D].
    """
    b, n, d = series.shape
    parts = [series]
    if instr is not None and instr.shape[0] > 0:
        e = nx.broadcast_to(instr, (b, instr.shape[0], d))
        parts = [series, e] if config.ts_text_order else [e, series]
    h = nx.concat(parts, axis=1) if len(parts) > 1 else series
    s = h.shape[1]
    pos = params["backbone.pos"]
    if s > pos.shape[0]:
        raise ConfigError(f"sequence of {s} tokens exceeds positional table of {pos.shape[0]}")
    h = nx.add(h, nx.broadcast_to(pos[0:s], (b, s, d)))
    for i in range(config.n_layers):
        h = transformer_layer(h, params, f"backbone.layers.{i}", config.n_heads, True, record)
    return h


@dataclass
class DecoderOutput:
    forecast: Tensor        # [B, T] normalised-series space
    reconstruction: Tensor  # [B, L]
    head: Tensor            # [B, O] full forecast head output


def decode(h: Tensor, params: Mapping[str, Tensor], config: ModelConfig, horizon: int,
           lookback: int) -> DecoderOutput:
    """Pad to R tokens, run the light transformer, flatten, apply the linear heads, truncate."""
    if horizon > config.max_horizon:
        raise ConfigError(f"horizon {horizon} exceeds max_horizon {config.max_horizon}")
    if lookback > config.max_recon:
        raise ConfigError(f"lookback {lookback} exceeds max_recon {config.max_recon}")
    b, s, d = h.shape
    r = config.max_tokens
    if s > r:
        raise ConfigError(f"{s} tokens exceed max_tokens {r}")
    if s < r:
        pad = nx.broadcast_to(params["decoder.pad"], (b, r - s, d))
        h = nx.concat([h, pad], axis=1)
    if config.use_light_trans:
        for i in range(config.n_light_layers):
            h = transformer_layer(h, params, f"decoder.light.{i}", config.n_heads, False)
    flat = nx.reshape(h, (b, r * d))
    head = linear(flat, params["decoder.forecast_head.weight"], params["decoder.forecast_head.bias"])
    recon = linear(flat, params["decoder.recon_head.weight"], params["decoder.recon_head.bias"])
    return DecoderOutput(head[:, 0:horizon], recon[:, 0:lookback], head)


@dataclass
class ForwardTrace:
    shapes: dict[str, tuple[int, ...]] = field(default_factory=dict)
    hidden: np.ndarray | None = None          # backbone output [B, I+N, D]
    head: np.ndarray | None = None            # de-stationarised full head [B, O]
    stats: SeriesStats | None = None
    attention: list = field(default_factory=list)
    instruction_tokens: int = 0


@dataclass
class ForwardResult:
    forecast: Tensor
    reconstruction: Tensor
    trace: ForwardTrace


class UniTime:
    """Parameters plus vocabulary; :meth:`forward` runs one single-domain batch."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary, params: dict[str, Tensor]):
        if config.vocab_size != len(vocab):
            raise ConfigError(f"config vocab_size {config.vocab_size} != vocabulary size {len(vocab)}")
        self.config = config
        self.vocab = vocab
        self.params = params

    @classmethod
    def create(cls, config: ModelConfig, vocab: Vocabulary, rng: np.random.Generator) -> "UniTime":
        if config.vocab_size != len(vocab):
            config = ModelConfig.from_dict({**config.to_dict(), "vocab_size": len(vocab)})
        return cls(config, vocab, init_params(config, rng))

    def forward(self, batch: Batch, spec: DomainSpec, training: bool = False,
                instruction: str | None = None, record_attention: bool = False) -> ForwardResult:
        """Forecast [B, T] and reconstruction [B, L] in the input's (dataset-scaled) space.

        Masks in ``batch`` are used only when ``training`` and masking is enabled;
        otherwise every position is observed. ``instruction`` overrides the
        domain's instruction text (zero-shot selection).
        """
        cfg = self.config
        trace = ForwardTrace()
        x = np.asarray(batch.inputs, dtype=np.float64)
        if x.shape[1] != spec.lookback:
            raise nx.ShapeError(f"batch lookback {x.shape[1]} != domain lookback {spec.lookback}")
        m = batch.masks if (training and cfg.use_masking) else np.ones_like(x)
        zp, mp, stats = tokenize_series(x, m, cfg.patch_len, spec.stride)
        trace.stats = stats
        trace.shapes["patches"] = zp.shape
        z = embed_and_fuse(zp, mp, self.params)
        trace.shapes["series_tokens"] = z.shape
        instr = None
        if cfg.use_instructions:
            text = spec.instruction if instruction is None else instruction
            instr = encode_instruction(text, self.vocab, self.params["instruction.embedding"])
            trace.instruction_tokens = instr.shape[0]
        h = backbone_forward(instr, z, self.params, cfg, trace.attention if record_attention else None)
        trace.shapes["hidden"] = h.shape
        trace.hidden = h.data
        out = decode(h, self.params, cfg, spec.horizon, spec.lookback)
        b = x.shape[0]
        mu_t = np.broadcast_to(stats.mean, (b, spec.horizon))
        sd_t = np.broadcast_to(stats.std, (b, spec.horizon))
        forecast = nx.add(nx.mul(out.forecast, sd_t), mu_t)
        recon = nx.add(nx.mul(out.reconstruction, np.broadcast_to(stats.std, (b, spec.lookback))),
                       np.broadcast_to(stats.mean, (b, spec.lookback)))
        trace.head = destationarize(out.head.data, stats)
        trace.shapes["forecast"] = forecast.shape
        trace.shapes["reconstruction"] = recon.shape
        return ForwardResult(forecast, recon, trace)

    def predict(self, inputs: np.ndarray, spec: DomainSpec, instruction: str | None = None) -> np.ndarray:
        """Masking-off, no-grad forecast for a [B, L] array."""
        inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
        b = inputs.shape[0]
        batch = Batch(spec.name, inputs, np.ones_like(inputs), np.zeros((b, spec.horizon)), np.zeros(b, dtype=np.int64))
        with nx.no_grad():
            return self.forward(batch, spec, instruction=instruction).forecast.data

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        for k, v in arrays.items():
            if self.params[k].shape != v.shape:
                raise nx.ShapeError(f"parameter {k}: shape {v.shape} != {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=np.float64, copy=True)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
