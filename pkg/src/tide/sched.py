"""Temperature schedules and the flow-matching time shift."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .rope import FrequencyTable, pair_frequencies


class TemperatureMode(str, enum.Enum):
    OFF = "Off"
    STATIC_YARN = "StaticYaRN"
    DYNAMIC_GLOBAL = "DynamicGlobal"
    DYNAMIC_PER_FREQUENCY = "DynamicPerFrequency"


@dataclass(frozen=True)
class TemperaturePolicy:
    mode: TemperatureMode = TemperatureMode.DYNAMIC_PER_FREQUENCY
    tau_min: float | None = None  # None -> yarn_temperature(s), see resolved()
    tau_max: float = 1.0
    alpha_low: float = 0.6
    alpha_high: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "mode", TemperatureMode(self.mode))
        if self.tau_max <= 0:
            raise ValueError(f"tau_max must be > 0, got {self.tau_max}")
        if self.tau_min is not None and not 0 < self.tau_min <= self.tau_max:
            raise ValueError(f"need 0 < tau_min <= tau_max, got {self.tau_min}, {self.tau_max}")
        if self.mode is TemperatureMode.DYNAMIC_PER_FREQUENCY and not (
            self.alpha_low > self.alpha_high > 0
        ):
            raise ValueError(
                f"need alpha_low > alpha_high > 0, got {self.alpha_low}, {self.alpha_high}"
            )

    @property
    def dynamic(self) -> bool:
        return self.mode in (TemperatureMode.DYNAMIC_GLOBAL, TemperatureMode.DYNAMIC_PER_FREQUENCY)

    def resolved(self, scale_s: float) -> "TemperaturePolicy":
        """Fill an unset ``tau_min`` with the YaRN temperature for ``scale_s``."""
        if self.tau_min is not None:
            return self
        return replace(self, tau_min=min(yarn_temperature(scale_s), self.tau_max))

    def global_tau(self, t: float) -> float:
        """The tau dividing the whole logit matrix at time ``t``.

        Per-frequency mode sharpens through band scaling of Q and K instead,
        so its global tau is 1.
        """
        if self.mode is TemperatureMode.DYNAMIC_PER_FREQUENCY:
            return 1.0
        return dynamic_temperature(t, 0.0, self)


def yarn_temperature(scale_s: float) -> float:
    if scale_s < 1:
        raise ValueError(f"scale_s must be >= 1, got {scale_s}")
    return 1.0 / (0.1 * math.log(scale_s) + 1.0) ** 2


def _check_unit(name: str, x: float):
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {x}")


def alpha_of_frequency(f: float, policy: TemperaturePolicy) -> float:
    if not policy.dynamic:
        raise ValueError(f"alpha(f) is only defined for dynamic modes, got {policy.mode.value}")
    _check_unit("f", f)
    # endpoint-exact form of alpha_low + (alpha_high - alpha_low) * f
    return (1.0 - f) * policy.alpha_low + f * policy.alpha_high


def dynamic_temperature(t: float, f: float, policy: TemperaturePolicy) -> float:
    """tau at normalized time ``t`` (1 = pure noise) for a band of frequency ``f``."""
    _check_unit("t", t)
    _check_unit("f", f)
    mode = policy.mode
    if mode is TemperatureMode.OFF:
        return 1.0
    if policy.tau_min is None:
        raise ValueError("tau_min is unset; call policy.resolved(scale_s) first")
    if mode is TemperatureMode.STATIC_YARN:
        return policy.tau_min
    if mode is TemperatureMode.DYNAMIC_GLOBAL:
        w = t
    else:
        w = t ** alpha_of_frequency(f, policy)
    if w == 1.0:
        return policy.tau_min
    return policy.tau_max - w * (policy.tau_max - policy.tau_min)


def band_scale_factors(
    tables: Sequence[FrequencyTable], t: float, policy: TemperaturePolicy
) -> np.ndarray:
    """Per-pair ``tau(t, f_j) ** -0.5``, applied to both Q and K.

    Scaling both sides divides each band's share of ``q . k`` by its own tau.
    """
    if policy.mode is not TemperatureMode.DYNAMIC_PER_FREQUENCY:
        raise ValueError("band scaling requires DynamicPerFrequency mode")
    freqs = pair_frequencies(tables)
    taus = np.array([dynamic_temperature(t, float(f), policy) for f in freqs])
    return taus**-0.5


class ShiftMode(str, enum.Enum):
    LINEAR = "LinearDefault"
    LOGARITHMIC = "Logarithmic"


@dataclass(frozen=True)
class TimeShiftSpec:
    mode: ShiftMode = ShiftMode.LOGARITHMIC
    lo_tokens: int = 256
    lo_mu: float = 0.5
    hi_tokens: int = 4096
    hi_mu: float = 1.15
    steps: int = 28

    def __post_init__(self):
        object.__setattr__(self, "mode", ShiftMode(self.mode))
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if not 1 <= self.lo_tokens < self.hi_tokens:
            raise ValueError("need 1 <= lo_tokens < hi_tokens")


def shift_mu(image_tokens: int, spec: TimeShiftSpec) -> float:
    """mu through the two anchors, in ``ln L_I`` (logarithmic) or ``L_I`` (linear)."""
    if image_tokens < 1:
        raise ValueError(f"image_tokens must be >= 1, got {image_tokens}")
    if spec.mode is ShiftMode.LOGARITHMIC:
        lo, hi, x = math.log(spec.lo_tokens), math.log(spec.hi_tokens), math.log(image_tokens)
    else:
        lo, hi, x = spec.lo_tokens, spec.hi_tokens, image_tokens
    w = (x - lo) / (hi - lo)
    # exact at both anchors
    return (1.0 - w) * spec.lo_mu + w * spec.hi_mu


def shifted_timesteps(spec: TimeShiftSpec, mu: float) -> np.ndarray:
    """``steps + 1`` times from 1 down to 0, warped by ``e^mu u / (e^mu u + 1 - u)``."""
    u = 1.0 - np.arange(spec.steps + 1, dtype=np.float64) / spec.steps
    e = math.exp(mu)
    return e * u / (e * u + (1.0 - u))
