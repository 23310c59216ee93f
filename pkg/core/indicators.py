"""Seven classical price oscillators computed from a close-only series.

Order: Stochastic %K, Stochastic %D, Momentum(10), Rate-of-Change(10),
Williams %R(14), A/D oscillator, Disparity(5). Values are raw; IndicatorScaler
turns them into training-set z-scores.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from core.errors import DataError
from core.tensor import Tensor, constant

INDICATOR_NAMES = (
    "stochastic_k",
    "stochastic_d",
    "momentum_10",
    "roc_10",
    "williams_r_14",
    "ad_oscillator",
    "disparity_5",
)
MIN_HISTORY = 14


def _stochastic_k(closes: np.ndarray, end: int, period: int = 14) -> float:
    window = closes[max(0, end - period + 1):end + 1]
    high, low = window.max(), window.min()
    if high == low:
        return 50.0
    return float((closes[end] - low) / (high - low) * 100.0)


def raw_indicators(closes: Sequence[float]) -> np.ndarray:
    """Indicator vector for the last close of ``closes``."""
    c = np.asarray(closes, dtype=np.float64)
    if c.ndim != 1 or c.size < MIN_HISTORY:
        raise DataError(f"technical indicators need {MIN_HISTORY} closes, got {c.size}")
    t = c.size - 1

    k = _stochastic_k(c, t)
    d = float(np.mean([_stochastic_k(c, t - j) for j in range(3)]))
    momentum = c[t] - c[t - 10]
    roc = c[t] / c[t - 10]

    window = c[t - 13:t + 1]
    high, low = window.max(), window.min()
    williams = -50.0 if high == low else float((high - c[t]) / (high - low) * -100.0)

    hi2, lo2 = max(c[t - 1], c[t]), min(c[t - 1], c[t])
    ad = 0.5 if hi2 == lo2 else float((hi2 - c[t - 1]) / (hi2 - lo2))

    disparity = c[t] / c[t - 4:t + 1].mean()
    return np.array([k, d, momentum, roc, williams, ad, disparity], dtype=np.float64)


@dataclass
class IndicatorScaler:
    """Per-indicator z-scoring fitted on the training split."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def identity(cls) -> IndicatorScaler:
        return cls(np.zeros(len(INDICATOR_NAMES)), np.ones(len(INDICATOR_NAMES)))

    @classmethod
    def fit(cls, rows: Sequence[Sequence[float]]) -> IndicatorScaler:
        data = np.asarray(rows, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] == 0 or data.shape[1] != len(INDICATOR_NAMES):
            raise DataError(f"cannot fit indicator scaler on array of shape {data.shape}")
        std = data.std(axis=0)
        std[std == 0.0] = 1.0
        return cls(data.mean(axis=0), std)

    def transform(self, values: Sequence[float]) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) - self.mean) / self.std


def technical_indicators(closes: Sequence[float], scaler: IndicatorScaler | None = None) -> Tensor:
    """Constant 7-vector for the model head; standardised when a scaler is given."""
    raw = raw_indicators(closes)
    return constant(scaler.transform(raw) if scaler is not None else raw)
