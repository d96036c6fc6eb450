"""2D axial rotary embeddings and the positional-interpolation family.

The head dimension is split into a height block followed by a width block.
Inside each block, consecutive feature pairs ``(x[2j], x[2j+1])`` rotate by
``position / pos_scale * theta[j]``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .numeric import NumericError, as_row_matrix


class RopeMode(str, enum.Enum):
    DIRECT = "Direct"
    PI = "PI"
    NTK_AWARE = "NTKAware"
    NTK_BY_PARTS = "NTKByParts"


class Axis(enum.IntEnum):
    HEIGHT = 0
    WIDTH = 1


@dataclass(frozen=True)
class RopeSpec:
    head_dim: int = 16
    axis_split: tuple[int, int] | None = None  # None -> even split
    base: float = 10000.0
    mode: RopeMode = RopeMode.DIRECT
    scale_s: float = 1.0
    ramp_low: float = 1.0
    ramp_high: float = 32.0
    # trained positions per axis; NTK-by-parts compares wavelengths against it
    context_len: float = 16.0

    def __post_init__(self):
        object.__setattr__(self, "mode", RopeMode(self.mode))
        if self.head_dim <= 0 or self.head_dim % 2:
            raise ValueError(f"head_dim must be a positive even number, got {self.head_dim}")
        split = self.axis_split
        if split is None:
            split = (self.head_dim // 2, self.head_dim // 2)
        split = tuple(int(v) for v in split)
        if len(split) != 2 or sum(split) != self.head_dim:
            raise ValueError(f"axis_split {split} must have two entries summing to {self.head_dim}")
        if any(v < 0 or v % 2 for v in split):
            raise ValueError(f"axis allocations must be even, got {split}")
        object.__setattr__(self, "axis_split", split)
        if not self.base > 1:
            raise ValueError(f"base must be > 1, got {self.base}")
        if self.scale_s < 1:
            raise ValueError(f"scale_s must be >= 1, got {self.scale_s}")
        if not self.ramp_low < self.ramp_high:
            raise ValueError("ramp_low must be < ramp_high")
        if self.context_len <= 0:
            raise ValueError("context_len must be > 0")

    @property
    def pairs(self) -> int:
        return self.head_dim // 2


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class FrequencyTable:
    thetas: np.ndarray
    norm_freq: np.ndarray
    pos_scale: float = 1.0
    base: float = field(default=10000.0, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "thetas", _frozen(self.thetas))
        object.__setattr__(self, "norm_freq", _frozen(self.norm_freq))

    def __eq__(self, other):
        if not isinstance(other, FrequencyTable):
            return NotImplemented
        return (
            self.pos_scale == other.pos_scale
            and np.array_equal(self.thetas, other.thetas)
            and np.array_equal(self.norm_freq, other.norm_freq)
        )

    __hash__ = None

    @property
    def pairs(self) -> int:
        return self.thetas.size

    def angles(self, positions) -> np.ndarray:
        """Rotation angle for every (position, pair); shape ``[len(positions), pairs]``."""
        pos = np.asarray(positions, dtype=np.float64) / self.pos_scale
        return pos[:, None] * self.thetas[None, :]


def rank_frequencies(pairs: int) -> np.ndarray:
    """Normalized frequency per pair: 1 for the fastest pair, 0 for the slowest.

    A lone pair counts as the fastest (f = 1).
    """
    if pairs == 1:
        return np.ones(1)
    j = np.arange(pairs, dtype=np.float64)
    return (pairs - 1 - j) / (pairs - 1)


def _thetas(base: float, d_axis: int) -> np.ndarray:
    j = np.arange(d_axis // 2, dtype=np.float64)
    return base ** (-2.0 * j / d_axis)


def base_frequencies(spec: RopeSpec, axis: Axis | int) -> FrequencyTable:
    d_axis = spec.axis_split[int(axis)]
    if d_axis % 2:
        raise ValueError(f"axis dimension must be even, got {d_axis}")
    return FrequencyTable(
        thetas=_thetas(spec.base, d_axis),
        norm_freq=rank_frequencies(d_axis // 2) if d_axis else np.zeros(0),
        pos_scale=1.0,
        base=spec.base,
    )


def ntk_by_parts_ramp(spec: RopeSpec, thetas: np.ndarray) -> np.ndarray:
    """Per-pair weight of the unchanged frequency (1) versus full PI (0).

    Uses the number of full rotations a pair completes over the trained
    context: above ``ramp_high`` the pair is kept, below ``ramp_low`` it is
    fully interpolated.
    """
    rotations = spec.context_len * thetas / (2 * math.pi)
    return np.clip((rotations - spec.ramp_low) / (spec.ramp_high - spec.ramp_low), 0.0, 1.0)


def interpolate(
    spec: RopeSpec,
    table: FrequencyTable,
    t: float | None = None,
    blend: Callable[[float], float] | None = None,
) -> FrequencyTable:
    """Apply ``spec.mode`` interpolation with scale ``spec.scale_s`` to ``table``.

    ``t`` and ``blend`` form the time-dependent hook: when ``t`` is given,
    ``blend(t)`` in [0, 1] sets how much of the extrapolation scale is applied
    (0 keeps the table as is, 1 applies the full scale). No blend schedule is
    built in; callers must supply one.
    """
    s = spec.scale_s
    if s < 1:
        raise ValueError(f"scale_s must be >= 1, got {s}")
    if t is not None:
        if blend is None:
            raise ValueError("a time blend function is required when t is given")
        w = float(blend(t))
        if not 0.0 <= w <= 1.0:
            raise ValueError(f"blend({t}) = {w} outside [0, 1]")
        s = 1.0 + w * (s - 1.0)
    if s == 1.0 or table.pairs == 0 or spec.mode is RopeMode.DIRECT:
        return table
    if spec.mode is RopeMode.PI:
        return replace(table, pos_scale=table.pos_scale * s)
    if spec.mode is RopeMode.NTK_AWARE:
        d = 2 * table.pairs
        if d == 2:
            return table  # theta_0 = 1 for any base
        new_base = table.base * s ** (d / (d - 2))
        return replace(table, thetas=_thetas(new_base, d), base=new_base)
    gamma = ntk_by_parts_ramp(spec, table.thetas)
    return replace(table, thetas=table.thetas * (gamma + (1.0 - gamma) / s))


def axis_tables(
    spec: RopeSpec, t: float | None = None, blend: Callable[[float], float] | None = None
) -> tuple[FrequencyTable, FrequencyTable]:
    return tuple(interpolate(spec, base_frequencies(spec, a), t, blend) for a in Axis)


def axial_positions(height: int, width: int) -> np.ndarray:
    """Row-major ``(row, col)`` index pair for each of ``height * width`` image tokens."""
    if height < 1 or width < 1:
        raise ValueError(f"grid must be at least 1x1, got {height}x{width}")
    k = np.arange(height * width)
    return np.stack([k // width, k % width], axis=1)


def joint_positions(text_len: int, height: int, width: int) -> np.ndarray:
    """Text tokens at (0, 0) followed by the image grid."""
    return np.concatenate([np.zeros((text_len, 2), dtype=np.int64), axial_positions(height, width)])


def rotate(
    features,
    positions,
    tables: Sequence[FrequencyTable],
    band_scale=None,
) -> np.ndarray:
    """Rotate ``features [L x head_dim]`` by per-axis angles.

    ``band_scale`` (one factor per rotary pair, height pairs first) multiplies
    each rotated pair after rotation.
    """
    x = as_row_matrix(features, "features")
    pos = np.asarray(positions)
    if pos.ndim != 2 or pos.shape != (x.shape[0], len(tables)):
        raise NumericError(f"positions shape {pos.shape} does not match {x.shape[0]} rows")
    head_dim = 2 * sum(tb.pairs for tb in tables)
    if x.shape[1] != head_dim:
        raise NumericError(f"feature width {x.shape[1]} != head_dim {head_dim}")
    if band_scale is not None:
        band_scale = np.asarray(band_scale, dtype=np.float64)
        if band_scale.shape != (head_dim // 2,):
            raise NumericError(f"band_scale needs {head_dim // 2} entries, got {band_scale.shape}")

    out = np.empty_like(x)
    off = 0
    pair_off = 0
    for axis, table in enumerate(tables):
        p = table.pairs
        if p == 0:
            continue
        ang = table.angles(pos[:, axis])
        cos, sin = np.cos(ang), np.sin(ang)
        xe = x[:, off : off + 2 * p : 2]
        xo = x[:, off + 1 : off + 2 * p : 2]
        re = xe * cos - xo * sin
        ro = xe * sin + xo * cos
        if band_scale is not None:
            g = band_scale[pair_off : pair_off + p]
            re = re * g
            ro = ro * g
        out[:, off : off + 2 * p : 2] = re
        out[:, off + 1 : off + 2 * p : 2] = ro
        off += 2 * p
        pair_off += p
    return out


def pair_frequencies(tables: Sequence[FrequencyTable]) -> np.ndarray:
    """Normalized frequency of every rotary pair, in ``rotate``'s pair order."""
    return np.concatenate([tb.norm_freq for tb in tables])
