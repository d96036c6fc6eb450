"""Numerically stable primitives shared by the rest of the package.

All probability math runs in float64. Randomness comes from :class:`Rng`, a
counter-based SplitMix64 stream, so a seed reproduces the same draws in any
language that implements the same recurrence (see README, "Random numbers").
"""

from __future__ import annotations

import math

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


class NumericError(ValueError):
    """Raised when an input or intermediate is non-finite or out of domain."""


def as_row_matrix(values, name: str = "matrix") -> np.ndarray:
    """Return ``values`` as a 2D float64 array, rejecting NaN/Inf."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise NumericError(f"{name}: expected a 2D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name}: non-finite values")
    return arr


def _as_vector(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise NumericError(f"{name}: expected a vector, got shape {arr.shape}")
    if arr.size == 0:
        raise NumericError("empty input")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name}: non-finite values")
    return arr


def logsumexp(values) -> float:
    """log(sum(exp(v))) with max subtraction."""
    v = _as_vector(values, "logsumexp")
    m = float(v.max())
    return m + math.log(float(np.exp(v - m).sum()))


def softmax_rows(logits, inv_temp_scale: float = 1.0, col_bias=None) -> np.ndarray:
    """Row-wise ``softmax((logits + col_bias) * inv_temp_scale)``.

    ``col_bias`` is broadcast against the columns: a vector of length ``cols``
    or a full matrix. It is added before scaling, as an attention mask would be.
    """
    x = as_row_matrix(logits, "logits")
    if not (math.isfinite(inv_temp_scale) and inv_temp_scale > 0):
        raise NumericError(f"inv_temp_scale must be finite and > 0, got {inv_temp_scale}")
    if col_bias is not None:
        bias = np.asarray(col_bias, dtype=np.float64)
        if bias.shape[-1] != x.shape[1]:
            raise NumericError(
                f"col_bias length {bias.shape[-1]} does not match {x.shape[1]} columns"
            )
        if not np.all(np.isfinite(bias)):
            raise NumericError("col_bias: non-finite values")
        x = x + bias
    if inv_temp_scale != 1.0:
        x = x * inv_temp_scale
    x = x - x.max(axis=1, keepdims=True)
    np.exp(x, out=x)
    x /= x.sum(axis=1, keepdims=True)
    return x


def softmax_row(logits, inv_temp_scale: float = 1.0, col_bias=None) -> np.ndarray:
    v = _as_vector(logits, "logits")
    bias = None if col_bias is None else _as_vector(col_bias, "col_bias")
    if bias is not None and bias.shape != v.shape:
        raise NumericError(f"col_bias length {bias.size} does not match {v.size} logits")
    return softmax_rows(v[None, :], inv_temp_scale, bias)[0]


# --- random numbers -------------------------------------------------------


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def _mix_int(x: int) -> int:
    return int(_mix64(np.array([x & _MASK64], dtype=np.uint64))[0])


class Rng:
    """Counter-based SplitMix64 generator.

    Draw ``i`` (0-based, counted over the lifetime of the generator) is
    ``mix64(seed + (i + 1) * 0x9E3779B97F4A7C15 mod 2**64)``. Uniforms take the
    top 53 bits; normals use Box-Muller on consecutive uniform pairs. The state
    is owned by the caller; nothing here is global.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self.counter = 0

    def spawn(self, *keys: int) -> "Rng":
        """Independent child stream keyed by integers, e.g. ``(seed, layout index)``."""
        s = self.seed
        for k in keys:
            s = _mix_int(s ^ _mix_int((int(k) + 0x632BE59BD9B4E019) & _MASK64))
        return Rng(s)

    def next_u64(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix64(np.uint64(self.seed) + idx * _GAMMA)

    def uniform(self, n: int) -> np.ndarray:
        """``n`` draws in [0, 1)."""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (2.0**-53)

    def normal(self, n: int, sigma: float = 1.0) -> np.ndarray:
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(2.0 * np.pi * u2)
        out[1::2] = r * np.sin(2.0 * np.pi * u2)
        return out[:n] * sigma

    def normal_matrix(self, rows: int, cols: int, sigma: float = 1.0) -> np.ndarray:
        return self.normal(rows * cols, sigma).reshape(rows, cols)


def gaussian_vector(n: int, sigma: float, seed: int) -> np.ndarray:
    if n < 1:
        raise NumericError(f"n must be >= 1, got {n}")
    if sigma < 0:
        raise NumericError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return np.zeros(n)
    return Rng(seed).normal(n, sigma)
