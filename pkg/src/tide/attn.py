"""Cross attention, MM-DiT joint attention and text anchoring.

Sequences are always ordered (text, image): rows ``0..L_T-1`` of a joint
matrix are text tokens, the rest are image tokens in row-major grid order.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .numeric import NumericError, as_row_matrix, softmax_rows


@dataclass(frozen=True)
class TokenLayout:
    text_len: int
    grid_h: int
    grid_w: int

    def __post_init__(self):
        if self.text_len < 1:
            raise ValueError(f"text_len must be >= 1, got {self.text_len}")
        if self.grid_h < 1 or self.grid_w < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.grid_h}x{self.grid_w}")

    @property
    def image_len(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def total(self) -> int:
        return self.text_len + self.image_len

    @property
    def resolution(self) -> str:
        return f"{self.grid_h}x{self.grid_w}"

    def pixel_ratio(self, trained: "TokenLayout") -> float:
        """lambda: image-token count relative to ``trained``."""
        return self.image_len / trained.image_len


@dataclass(frozen=True)
class JointLogits:
    """Pre-softmax scores split by key type: ``S_T [R x L_T]`` and ``S_I [R x L_I]``."""

    score_text: np.ndarray
    score_image: np.ndarray

    def __post_init__(self):
        st = as_row_matrix(self.score_text, "score_text")
        si = as_row_matrix(self.score_image, "score_image")
        if st.shape[0] != si.shape[0]:
            raise NumericError(f"text/image blocks disagree on rows: {st.shape[0]} vs {si.shape[0]}")
        object.__setattr__(self, "score_text", st)
        object.__setattr__(self, "score_image", si)

    @property
    def rows(self) -> int:
        return self.score_text.shape[0]

    @property
    def text_len(self) -> int:
        return self.score_text.shape[1]

    @property
    def image_len(self) -> int:
        return self.score_image.shape[1]

    def dense(self) -> np.ndarray:
        return np.concatenate([self.score_text, self.score_image], axis=1)


class BetaMode(str, enum.Enum):
    FIXED = "Fixed"
    ADAPTIVE = "Adaptive"


@dataclass(frozen=True)
class AnchorPolicy:
    enabled: bool = True
    beta_mode: BetaMode = BetaMode.ADAPTIVE
    beta_fixed: float = 0.0
    lam: float | None = None  # pixel-count ratio; None -> derived from the layouts
    # bias only image-query rows instead of every row of S_T
    image_rows_only: bool = False
    # add beta after the temperature division so the effective bias is exactly beta
    bias_after_temperature: bool = False

    def __post_init__(self):
        object.__setattr__(self, "beta_mode", BetaMode(self.beta_mode))
        if self.lam is not None and self.beta_mode is BetaMode.ADAPTIVE and self.lam < 1:
            raise ValueError(f"adaptive anchoring needs lambda >= 1, got {self.lam}")


def anchoring_bias(policy: AnchorPolicy, scale_s: float | None = None) -> float:
    """Text-anchoring bias.

    Adaptive mode returns ``ln(lambda)``; when only a per-side scale ``s`` is
    known, ``lambda = s**2`` and the bias is ``2 ln s``.
    """
    if not policy.enabled:
        return 0.0
    if policy.beta_mode is BetaMode.FIXED:
        return float(policy.beta_fixed)
    if policy.lam is not None:
        lam = policy.lam
        if lam < 1:
            raise ValueError(f"lambda must be >= 1, got {lam}")
        return math.log(lam)
    if scale_s is None:
        raise ValueError("adaptive anchoring needs lambda or scale_s")
    if scale_s < 1:
        raise ValueError(f"lambda must be >= 1, got s**2 = {scale_s**2}")
    return 2.0 * math.log(scale_s)


class CrossProjections(NamedTuple):
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray


def cross_attention(x_image, x_text, weights: CrossProjections, d: int) -> np.ndarray:
    """Image queries attending to text keys/values only."""
    xi = as_row_matrix(x_image, "x_image")
    xt = as_row_matrix(x_text, "x_text")
    wq, wk, wv = (as_row_matrix(w, n) for w, n in zip(weights, ("w_q", "w_k", "w_v")))
    if xi.shape[1] != wq.shape[0] or xt.shape[1] != wk.shape[0] or xt.shape[1] != wv.shape[0]:
        raise NumericError("feature width does not match projection input width")
    if wq.shape[1] != wk.shape[1]:
        raise NumericError("query and key projections disagree on hidden width")
    q, k, v = xi @ wq, xt @ wk, xt @ wv
    p = softmax_rows(q @ k.T, 1.0 / math.sqrt(d))
    return p @ v


def joint_logits(q, k, layout: TokenLayout) -> JointLogits:
    q = as_row_matrix(q, "Q")
    k = as_row_matrix(k, "K")
    if q.shape[0] != layout.total or k.shape[0] != layout.total:
        raise NumericError(
            f"Q/K have {q.shape[0]}/{k.shape[0]} rows, layout expects {layout.total}"
        )
    if q.shape[1] != k.shape[1]:
        raise NumericError(f"Q/K widths differ: {q.shape[1]} vs {k.shape[1]}")
    s = q @ k.T
    return JointLogits(s[:, : layout.text_len], s[:, layout.text_len :])


def anchored_attention(
    logits: JointLogits,
    beta: float,
    tau: float,
    d: int,
    image_rows_only: bool = False,
    bias_after_temperature: bool = False,
) -> np.ndarray:
    """``softmax(Concat(S_T + beta, S_I) / (tau * sqrt(d)))`` row-wise.

    ``beta`` is in post-``sqrt(d)`` logit units, so the default effective bias
    after the temperature division is ``beta / tau``. With
    ``bias_after_temperature`` it is exactly ``beta``. ``image_rows_only``
    leaves the first ``L_T`` query rows (text queries) unbiased.
    """
    if not (math.isfinite(tau) and tau > 0):
        raise NumericError(f"tau must be finite and > 0, got {tau}")
    if d < 1:
        raise NumericError(f"d must be >= 1, got {d}")
    if not (math.isfinite(beta) and beta >= 0):
        raise NumericError(f"beta must be finite and >= 0, got {beta}")
    lt = logits.text_len
    z = logits.dense() * (1.0 / math.sqrt(d))
    if bias_after_temperature:
        z *= 1.0 / tau
        inv_tau = 1.0
    else:
        inv_tau = 1.0 / tau
    if beta:
        first = lt if image_rows_only else 0
        z[first:, :lt] += beta
    return softmax_rows(z, inv_tau)


def attention_output(p, v) -> np.ndarray:
    p = as_row_matrix(p, "P")
    v = as_row_matrix(v, "V")
    if p.shape[1] != v.shape[0]:
        raise NumericError(f"P has {p.shape[1]} columns but V has {v.shape[0]} rows")
    return p @ v
