"""Attention entropy, text-mass accounting and text-influence maps."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .attn import JointLogits, TokenLayout, anchored_attention
from .numeric import NumericError, Rng, as_row_matrix

TEXT_MASS_HEADER = (
    "resolution",
    "L_T",
    "L_I",
    "beta",
    "tau_mode",
    "mean_text_mass",
    "mean_entropy",
)


def attention_entropy(p_row, atol: float = 1e-9) -> float:
    """Shannon entropy in nats, with 0 ln 0 = 0."""
    p = np.asarray(p_row, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise NumericError("expected a nonempty probability vector")
    if np.any(p < 0) or abs(p.sum() - 1.0) > atol:
        raise NumericError(f"row is not a probability vector (sum={p.sum()!r})")
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def row_entropies(p) -> np.ndarray:
    p = as_row_matrix(p, "P")
    logp = np.log(p, out=np.zeros_like(p), where=p > 0)
    return -(p * logp).sum(axis=1)


def entropy_prediction(length: int, sigma_sq: float) -> float:
    """Large-L entropy of a softmax over logits with variance ``sigma_sq``."""
    if length < 2:
        raise ValueError(f"length must be >= 2, got {length}")
    if sigma_sq < 0:
        raise ValueError(f"sigma_sq must be >= 0, got {sigma_sq}")
    return math.log(length) - sigma_sq / 2.0


@dataclass(frozen=True)
class AttentionStats:
    """Per-row statistics of one attention matrix.

    ``text_mass`` covers every query row; ``mean_text_mass`` averages image
    query rows only.
    """

    entropy: np.ndarray
    logit_variance: np.ndarray
    text_mass: np.ndarray
    layout: TokenLayout
    label: tuple = field(default=(), compare=False)

    @property
    def image_text_mass(self) -> np.ndarray:
        return self.text_mass[self.layout.text_len :]

    @property
    def mean_text_mass(self) -> float:
        return float(self.image_text_mass.mean())

    @property
    def mean_entropy(self) -> float:
        return float(self.entropy.mean())


def measure_stats(p, s: JointLogits, layout: TokenLayout, label: tuple = ()) -> AttentionStats:
    p = as_row_matrix(p, "P")
    if p.shape != (layout.total, layout.total):
        raise NumericError(f"P has shape {p.shape}, layout expects {layout.total} square")
    if s.rows != layout.total or s.text_len != layout.text_len:
        raise NumericError("logit blocks do not match the layout")
    return AttentionStats(
        entropy=row_entropies(p),
        logit_variance=s.dense().var(axis=1),
        text_mass=p[:, : layout.text_len].sum(axis=1),
        layout=layout,
        label=label,
    )


@dataclass(frozen=True)
class InfluenceMap:
    values: np.ndarray  # grid_h x grid_w
    count: int  # number of stats objects averaged
    labels: tuple = ()
    normalized: bool = True


def influence_map(
    stats: Sequence[AttentionStats], layout: TokenLayout, normalize: bool = True
) -> InfluenceMap:
    """Mean per-image-token text mass over ``stats``, reshaped to the grid.

    With ``normalize`` the map is min-max scaled to [0, 1]; a flat map becomes
    all zeros.
    """
    if not stats:
        raise ValueError("influence_map needs at least one stats object")
    for st in stats:
        if st.layout != layout:
            raise ValueError(f"stats layout {st.layout} does not match {layout}")
    mass = np.mean([st.image_text_mass for st in stats], axis=0)
    grid = mass.reshape(layout.grid_h, layout.grid_w)
    if normalize:
        lo, hi = grid.min(), grid.max()
        grid = np.zeros_like(grid) if hi == lo else (grid - lo) / (hi - lo)
    return InfluenceMap(grid, len(stats), tuple(st.label for st in stats), normalize)


def iid_logits(text_len: int, image_len: int, rows: int, sigma: float, rng: Rng) -> JointLogits:
    s = rng.normal_matrix(rows, text_len + image_len, sigma)
    return JointLogits(s[:, :text_len], s[:, text_len:])


def iid_text_mass(
    text_len: int,
    image_len: int,
    beta: float = 0.0,
    tau: float = 1.0,
    sigma: float = 1.0,
    trials: int = 200,
    rows: int = 4,
    seed: int = 0,
) -> float:
    """Monte-Carlo mean text mass for i.i.d. N(0, sigma^2) logits (d = 1)."""
    rng = Rng(seed)
    total = 0.0
    for _ in range(trials):
        p = anchored_attention(iid_logits(text_len, image_len, rows, sigma, rng), beta, tau, 1)
        total += p[:, :text_len].sum(axis=1).mean()
    return total / trials


@dataclass(frozen=True)
class SweepRow:
    layout: TokenLayout
    beta: float
    tau_mode: str
    mean_text_mass: float
    mean_entropy: float
    stats: tuple = field(default=(), compare=False, repr=False)

    def as_csv_row(self) -> list[str]:
        return [
            self.layout.resolution,
            str(self.layout.text_len),
            str(self.layout.image_len),
            fmt(self.beta),
            self.tau_mode,
            fmt(self.mean_text_mass),
            fmt(self.mean_entropy),
        ]


def fmt(x: float) -> str:
    return format(float(x), ".12g")


def sweep_text_mass(
    config,
    resolutions: Sequence[TokenLayout],
    anchor_on: bool,
    weights=None,
    synthetic: bool = False,
    trials: int = 200,
    sigma: float = 1.0,
) -> list[SweepRow]:
    """Mean text mass per layout at the first sampling step.

    ``config`` is a :class:`tide.toydit.ToyDitConfig`. In synthetic mode the
    model is bypassed and logits are i.i.d. normal, with lambda taken relative
    to ``config.trained_grid``.
    """
    from . import toydit  # toydit depends on this module

    if not resolutions:
        raise ValueError("no resolutions to sweep")
    trained = toydit.trained_layout(config)
    rows = []
    for idx, layout in enumerate(resolutions):
        ctx = toydit.make_context(config, layout, 1.0, anchor_on=anchor_on)
        if synthetic:
            # beta in the temperature-free i.i.d. setting is exactly ln(lambda)
            lam = max(layout.pixel_ratio(trained), 1.0)
            beta = math.log(lam) if anchor_on else 0.0
            mass = iid_text_mass(
                layout.text_len, layout.image_len, beta, 1.0, sigma, trials,
                seed=Rng(config.seed).spawn(idx).seed,
            )
            rows.append(SweepRow(layout, beta, "Off", mass, float("nan")))
            continue
        if weights is None:
            weights = toydit.init_weights(config)
        stats = toydit.first_step_stats(config, weights, layout, ctx, stream=idx)
        rows.append(
            SweepRow(
                layout,
                ctx.beta,
                config.temperature.mode.value,
                float(np.mean([st.mean_text_mass for st in stats])),
                float(np.mean([st.mean_entropy for st in stats])),
                tuple(stats),
            )
        )
    return rows


def text_mass_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TEXT_MASS_HEADER)
    for r in rows:
        w.writerow(r.as_csv_row())
    return buf.getvalue()
