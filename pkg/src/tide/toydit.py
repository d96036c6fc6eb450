"""A desk-scale MM-DiT with joint attention, 2D RoPE and an Euler sampler.

Weights are stored as float32; the forward pass runs in float64. The model is
random-initialized from ``config.seed``; there is no training loop.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import math
import os
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import rope as rope_mod
from .attn import AnchorPolicy, TokenLayout, anchored_attention, anchoring_bias, joint_logits
from .diag import AttentionStats, measure_stats
from .numeric import NumericError, Rng
from .rope import RopeMode, RopeSpec
from .sched import (
    TemperatureMode,
    TemperaturePolicy,
    TimeShiftSpec,
    band_scale_factors,
    dynamic_temperature,
    shift_mu,
    shifted_timesteps,
)

WEIGHTS_FORMAT = "tide-toydit-weights"


class TimeBlend(str, enum.Enum):
    """Time hook for RoPE interpolation strength (see ``rope.interpolate``)."""

    NONE = "none"
    LINEAR = "linear"  # strength = t; a stand-in, not a published schedule


_BLENDS: dict[TimeBlend, Callable[[float], float] | None] = {
    TimeBlend.NONE: None,
    TimeBlend.LINEAR: lambda t: t,
}


@dataclass(frozen=True)
class ToyDitConfig:
    channels: int = 4
    token_dim: int = 64
    head_dim: int = 16
    heads: int = 4
    blocks: int = 2
    mlp_ratio: int = 2
    trained_grid: tuple[int, int] = (16, 16)
    text_len: int = 8
    text_pos: tuple[int, int] = (0, 0)
    rope: RopeSpec = field(default_factory=lambda: RopeSpec(mode=RopeMode.NTK_BY_PARTS))
    time_blend: TimeBlend = TimeBlend.NONE
    anchor: AnchorPolicy = field(default_factory=AnchorPolicy)
    temperature: TemperaturePolicy = field(default_factory=TemperaturePolicy)
    timeshift: TimeShiftSpec = field(default_factory=TimeShiftSpec)
    stats_blocks: tuple[int, ...] = (0,)
    seed: int = 42

    def __post_init__(self):
        object.__setattr__(self, "trained_grid", tuple(self.trained_grid))
        object.__setattr__(self, "text_pos", tuple(self.text_pos))
        object.__setattr__(self, "stats_blocks", tuple(self.stats_blocks))
        object.__setattr__(self, "time_blend", TimeBlend(self.time_blend))
        if self.token_dim != self.heads * self.head_dim:
            raise ValueError(
                f"token_dim {self.token_dim} != heads {self.heads} x head_dim {self.head_dim}"
            )
        if self.rope.head_dim != self.head_dim:
            raise ValueError(f"rope.head_dim {self.rope.head_dim} != head_dim {self.head_dim}")
        if self.token_dim % 2:
            raise ValueError("token_dim must be even for the time embedding")
        if min(self.trained_grid) < 1 or self.text_len < 1 or self.channels < 1:
            raise ValueError("grid, text_len and channels must be positive")
        if any(not 0 <= b < self.blocks for b in self.stats_blocks):
            raise ValueError(f"stats_blocks {self.stats_blocks} out of range")


def config_dict(obj):
    """JSON-ready view of a (nested) config dataclass."""
    if dataclasses.is_dataclass(obj):
        return {f.name: config_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (tuple, list)):
        return [config_dict(v) for v in obj]
    return obj


def config_hash(config: ToyDitConfig) -> str:
    """Hash of everything that determines weight shapes and initialization."""
    keys = ("channels", "token_dim", "head_dim", "heads", "blocks", "mlp_ratio", "seed")
    blob = json.dumps({k: getattr(config, k) for k in keys}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def trained_layout(config: ToyDitConfig) -> TokenLayout:
    return TokenLayout(config.text_len, *config.trained_grid)


# --- weights -------------------------------------------------------------


def weight_shapes(config: ToyDitConfig) -> dict[str, tuple[int, ...]]:
    c, hidden = config.token_dim, config.token_dim * config.mlp_ratio
    shapes = {"time.w": (c, c), "in.w": (config.channels, c), "in.b": (c,)}
    for b in range(config.blocks):
        for side in ("text", "image"):
            for name in ("q", "k", "v", "o"):
                shapes[f"block{b}.{name}_{side}"] = (c, c)
            shapes[f"block{b}.mlp_in_{side}"] = (c, hidden)
            shapes[f"block{b}.mlp_out_{side}"] = (hidden, c)
    shapes["out.w"] = (c, config.channels)
    shapes["out.b"] = (config.channels,)
    return shapes


@dataclass
class ToyDitWeights:
    tensors: dict[str, np.ndarray]
    config_hash: str = ""

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def check(self, config: ToyDitConfig):
        shapes = weight_shapes(config)
        if list(shapes) != list(self.tensors):
            raise ValueError("weight names do not match the config")
        for name, shape in shapes.items():
            t = self.tensors[name]
            if t.shape != shape:
                raise ValueError(f"{name}: shape {t.shape}, expected {shape}")
            if not np.all(np.isfinite(t)):
                raise NumericError(f"{name}: non-finite weights")


def init_weights(config: ToyDitConfig) -> ToyDitWeights:
    """Seeded random init: N(0, 1/fan_in) matrices, zero biases, float32."""
    rng = Rng(config.seed).spawn(1)
    tensors = {}
    for name, shape in weight_shapes(config).items():
        if len(shape) == 1:
            tensors[name] = np.zeros(shape, dtype=np.float32)
        else:
            fan_in = shape[0]
            w = rng.normal_matrix(*shape, sigma=1.0 / math.sqrt(fan_in))
            tensors[name] = w.astype(np.float32)
    return ToyDitWeights(tensors, config_hash(config))


def save_weights(weights: ToyDitWeights, path) -> None:
    """JSON manifest, one NUL byte, then little-endian float32 data in manifest order."""
    manifest = {
        "format": WEIGHTS_FORMAT,
        "dtype": "<f4",
        "config_hash": weights.config_hash,
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in weights.tensors.items()],
    }
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    blob = b"".join(np.ascontiguousarray(t, dtype="<f4").tobytes() for t in weights.tensors.values())
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(head + b"\0" + blob)
    os.replace(tmp, path)


def load_weights(path, config: ToyDitConfig | None = None) -> ToyDitWeights:
    with open(path, "rb") as fh:
        data = fh.read()
    sep = data.find(b"\0")
    if sep < 0:
        raise ValueError(f"{path}: missing manifest terminator")
    manifest = json.loads(data[:sep].decode("utf-8"))
    if manifest.get("format") != WEIGHTS_FORMAT or manifest.get("dtype") != "<f4":
        raise ValueError(f"{path}: not a {WEIGHTS_FORMAT} file")
    blob = memoryview(data)[sep + 1 :]
    expected = sum(4 * math.prod(t["shape"]) for t in manifest["tensors"])
    if len(blob) != expected:
        raise ValueError(f"{path}: blob holds {len(blob)} bytes, manifest needs {expected}")
    tensors = {}
    off = 0
    for entry in manifest["tensors"]:
        n = math.prod(entry["shape"])
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=off).astype(np.float32)
        tensors[entry["name"]] = arr.reshape(entry["shape"])
        off += 4 * n
    weights = ToyDitWeights(tensors, manifest.get("config_hash", ""))
    if config is not None:
        if weights.config_hash != config_hash(config):
            warnings.warn(f"{path}: config hash differs from the current config", stacklevel=2)
        weights.check(config)
    return weights


# --- tokens --------------------------------------------------------------


def patchify(latent, config: ToyDitConfig) -> tuple[np.ndarray, TokenLayout]:
    """``[H, W, channels]`` grid -> row-major ``[H*W, channels]`` tokens."""
    x = np.asarray(latent)
    if x.ndim != 3 or x.shape[2] != config.channels:
        raise ValueError(f"latent shape {x.shape} does not have {config.channels} channels")
    h, w, ch = x.shape
    return x.reshape(h * w, ch).copy(), TokenLayout(config.text_len, h, w)


def unpatchify(tokens, layout: TokenLayout) -> np.ndarray:
    x = np.asarray(tokens)
    return x.reshape(layout.grid_h, layout.grid_w, x.shape[1]).copy()


def text_tokens(config: ToyDitConfig, seed: int | None = None) -> np.ndarray:
    """Seeded stand-in for text-encoder outputs, ``[text_len, token_dim]``."""
    rng = Rng(config.seed if seed is None else seed).spawn(2)
    return rng.normal_matrix(config.text_len, config.token_dim)


def noise_latent(config: ToyDitConfig, grid_h: int, grid_w: int, seed: int, stream: int = 0):
    rng = Rng(seed).spawn(3, stream)
    return rng.normal(grid_h * grid_w * config.channels).reshape(grid_h, grid_w, config.channels)


def time_embedding(t: float, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = 1000.0 * t * freqs
    return np.concatenate([np.sin(args), np.cos(args)])


# --- forward -------------------------------------------------------------


@dataclass(frozen=True)
class ForwardContext:
    """Everything the attention layers need at one (layout, t)."""

    layout: TokenLayout
    t: float
    scale_h: float
    scale_w: float
    lam: float
    beta: float
    tau: float  # global temperature
    band_scale: np.ndarray | None
    tables: tuple
    positions: np.ndarray
    temperature: TemperaturePolicy
    image_rows_only: bool = False
    bias_after_temperature: bool = False

    @property
    def scale_s(self) -> float:
        """Per-side scale equivalent to the pixel ratio, ``sqrt(lambda)``."""
        return math.sqrt(self.lam)


def make_context(
    config: ToyDitConfig, layout: TokenLayout, t: float, anchor_on: bool | None = None
) -> ForwardContext:
    th, tw = config.trained_grid
    s_h = max(layout.grid_h / th, 1.0)
    s_w = max(layout.grid_w / tw, 1.0)
    lam = max(layout.pixel_ratio(trained_layout(config)), 1.0)

    anchor = config.anchor
    if anchor_on is not None:
        anchor = replace(anchor, enabled=anchor_on)
    if anchor.lam is None:
        anchor = replace(anchor, lam=lam)
    beta = anchoring_bias(anchor)

    temp = config.temperature.resolved(math.sqrt(lam))
    blend = _BLENDS[config.time_blend]
    hook_t = t if blend is not None else None
    tables = (
        rope_mod.interpolate(
            replace(config.rope, scale_s=s_h, context_len=th),
            rope_mod.base_frequencies(config.rope, rope_mod.Axis.HEIGHT),
            hook_t,
            blend,
        ),
        rope_mod.interpolate(
            replace(config.rope, scale_s=s_w, context_len=tw),
            rope_mod.base_frequencies(config.rope, rope_mod.Axis.WIDTH),
            hook_t,
            blend,
        ),
    )
    band = None
    if temp.mode is TemperatureMode.DYNAMIC_PER_FREQUENCY:
        band = band_scale_factors(tables, t, temp)
    positions = rope_mod.joint_positions(layout.text_len, layout.grid_h, layout.grid_w)
    positions[: layout.text_len] = config.text_pos
    return ForwardContext(
        layout=layout,
        t=t,
        scale_h=s_h,
        scale_w=s_w,
        lam=lam,
        beta=beta,
        tau=temp.global_tau(t),
        band_scale=band,
        tables=tables,
        positions=positions,
        temperature=temp,
        image_rows_only=anchor.image_rows_only,
        bias_after_temperature=anchor.bias_after_temperature,
    )


def _rmsnorm(x: np.ndarray) -> np.ndarray:
    return x / np.sqrt((x * x).mean(axis=1, keepdims=True) + 1e-6)


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)))


def _w(weights: ToyDitWeights, name: str) -> np.ndarray:
    return weights[name].astype(np.float64)


def joint_attention(
    x_text: np.ndarray,
    x_image: np.ndarray,
    block: int,
    config: ToyDitConfig,
    weights: ToyDitWeights,
    ctx: ForwardContext,
    record: list | None = None,
) -> np.ndarray:
    """Multi-head joint attention of one block; returns ``O [L x token_dim]``."""
    layout = ctx.layout
    ht, hi = _rmsnorm(x_text), _rmsnorm(x_image)
    proj = {}
    for name in ("q", "k", "v"):
        proj[name] = np.concatenate(
            [ht @ _w(weights, f"block{block}.{name}_text"), hi @ _w(weights, f"block{block}.{name}_image")]
        )
    d = config.head_dim
    out = np.empty((layout.total, config.token_dim))
    for h in range(config.heads):
        sl = slice(h * d, (h + 1) * d)
        try:
            q = rope_mod.rotate(proj["q"][:, sl], ctx.positions, ctx.tables, ctx.band_scale)
            k = rope_mod.rotate(proj["k"][:, sl], ctx.positions, ctx.tables, ctx.band_scale)
            logits = joint_logits(q, k, layout)
            p = anchored_attention(
                logits, ctx.beta, ctx.tau, d, ctx.image_rows_only, ctx.bias_after_temperature
            )
        except NumericError as exc:
            raise NumericError(f"block {block}, head {h}: {exc}") from exc
        if not np.all(np.isfinite(p)):
            raise NumericError(f"non-finite attention in block {block}, head {h}")
        if record is not None and block in config.stats_blocks:
            record.append(measure_stats(p, logits, layout, label=(block, h, ctx.t)))
        out[:, sl] = p @ proj["v"][:, sl]
    return out


def forward(
    image_tokens,
    text,
    layout: TokenLayout,
    t: float,
    config: ToyDitConfig,
    weights: ToyDitWeights,
    ctx: ForwardContext | None = None,
    record: list | None = None,
) -> np.ndarray:
    """Velocity prediction ``[L_I, channels]`` for ``image_tokens`` at time ``t``.

    Pass ``record`` (a list) to collect one :class:`AttentionStats` per head of
    each block in ``config.stats_blocks``.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    xi = np.asarray(image_tokens, dtype=np.float64)
    xt = np.asarray(text, dtype=np.float64)
    if xi.shape != (layout.image_len, config.channels):
        raise ValueError(f"image tokens {xi.shape} do not match layout {layout.resolution}")
    if xt.shape != (layout.text_len, config.token_dim):
        raise ValueError(f"text tokens {xt.shape} do not match ({layout.text_len}, {config.token_dim})")
    if ctx is None:
        ctx = make_context(config, layout, t)

    temb = time_embedding(t, config.token_dim) @ _w(weights, "time.w")
    x_text = xt + temb
    x_image = xi @ _w(weights, "in.w") + _w(weights, "in.b") + temb
    lt = layout.text_len
    for b in range(config.blocks):
        o = joint_attention(x_text, x_image, b, config, weights, ctx, record)
        x_text = x_text + o[:lt] @ _w(weights, f"block{b}.o_text")
        x_image = x_image + o[lt:] @ _w(weights, f"block{b}.o_image")
        for side in ("text", "image"):
            x = x_text if side == "text" else x_image
            hid = _gelu(_rmsnorm(x) @ _w(weights, f"block{b}.mlp_in_{side}"))
            x = x + hid @ _w(weights, f"block{b}.mlp_out_{side}")
            if side == "text":
                x_text = x
            else:
                x_image = x
        if not (np.all(np.isfinite(x_text)) and np.all(np.isfinite(x_image))):
            raise NumericError(f"non-finite activations after block {b}")
    return _rmsnorm(x_image) @ _w(weights, "out.w") + _w(weights, "out.b")


def first_step_stats(
    config: ToyDitConfig,
    weights: ToyDitWeights,
    layout: TokenLayout,
    ctx: ForwardContext | None = None,
    stream: int = 0,
) -> list[AttentionStats]:
    """Attention stats of one forward pass at t = 1 on seeded noise."""
    noise = noise_latent(config, layout.grid_h, layout.grid_w, config.seed, stream)
    tokens, _ = patchify(noise, config)
    record: list[AttentionStats] = []
    forward(tokens, text_tokens(config), layout, 1.0, config, weights, ctx, record)
    return record


@dataclass
class StepRecord:
    step: int
    t: float
    t_next: float
    tau_f0: float
    tau_f1: float
    beta: float
    mu: float
    mean_text_mass: float | None


def euler_sample(
    noise,
    text,
    config: ToyDitConfig,
    weights: ToyDitWeights,
    record_stats: bool = False,
) -> tuple[np.ndarray, list[StepRecord]]:
    """Integrate from t = 1 to t = 0 over the shifted grid with Euler steps."""
    tokens, layout = patchify(noise, config)
    x = tokens.astype(np.float64)
    mu = shift_mu(layout.image_len, config.timeshift)
    times = shifted_timesteps(config.timeshift, mu)
    trace = []
    for i in range(config.timeshift.steps):
        t, t_next = float(times[i]), float(times[i + 1])
        ctx = make_context(config, layout, t)
        record: list | None = [] if record_stats else None
        v = forward(x, text, layout, t, config, weights, ctx, record)
        x = x + (t_next - t) * v
        mass = float(np.mean([st.mean_text_mass for st in record])) if record else None
        taus = [
            dynamic_temperature(t, f, ctx.temperature) for f in (0.0, 1.0)
        ]
        trace.append(StepRecord(i, t, t_next, taus[0], taus[1], ctx.beta, mu, mass))
    return unpatchify(x, layout), trace
