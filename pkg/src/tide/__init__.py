"""Training-free resolution extrapolation mechanisms for diffusion transformers.

Text anchoring, attention-temperature schedules, RoPE interpolation, attention
diagnostics and a toy MM-DiT that exercises them end to end.
"""

__version__ = "0.1.0"
