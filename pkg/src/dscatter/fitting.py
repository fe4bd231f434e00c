"""Power-law fits on log-log axes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import ConfigurationError


@dataclass(frozen=True)
class FitResult:
    exponent: float
    amplitude: float
    r_squared: float
    window: tuple[float, float]
    stderr: float = 0.0
    samples: int = 0

    def to_dict(self) -> dict:
        return {"exponent": self.exponent, "amplitude": self.amplitude, "r_squared": self.r_squared,
                "window": list(self.window), "stderr": self.stderr, "samples": self.samples}


def fit_power_law(t, y, window: tuple[float, float] | None = None, min_samples: int = 8) -> FitResult:
    """Least-squares fit ``y = A t^k`` on ``(log t, log y)`` restricted to ``window``."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if window is not None:
        lo, hi = window
        keep = (t >= lo * (1 - 1e-12)) & (t <= hi * (1 + 1e-12))
        t, y = t[keep], y[keep]
    if t.size < min_samples:
        raise ConfigurationError(f"power-law fit needs at least {min_samples} samples, got {t.size}")
    if np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise ConfigurationError("power-law fit needs positive finite values")
    lt, ly = np.log(t), np.log(y)
    if np.ptp(ly) == 0:
        return FitResult(0.0, float(y[0]), 1.0, (float(t[0]), float(t[-1])), 0.0, t.size)
    res = stats.linregress(lt, ly)
    return FitResult(float(res.slope), float(np.exp(res.intercept)), float(res.rvalue**2),
                     (float(t[0]), float(t[-1])), float(res.stderr), int(t.size))
