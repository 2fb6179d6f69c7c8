"""Test statistics and thresholds: ED, WSED, mWSED, IED and msED."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .channel import ChannelConfig, ed_moments
from .stats import q_function, q_inverse

H0, H1 = 0, 1

DETECTORS = ("ED", "WSED", "mWSED", "EM-mWSED", "EM-Viterbi", "IED", "msED")


class WeightScheme(str, Enum):
    UNIFORM = "uniform"
    EXPONENTIAL = "exponential"


@dataclass(frozen=True)
class DetectorConfig:
    detector: str
    window_length: int = 150
    wsed_past_samples: int = 3
    msed_slots: int = 2
    weight_scheme: WeightScheme | None = None
    threshold: float | None = None

    def __post_init__(self):
        if self.detector not in DETECTORS:
            raise ValueError(f"unknown detector {self.detector!r}; expected one of {DETECTORS}")
        if self.window_length < 1:
            raise ValueError("window_length must be >= 1")
        if self.detector == "WSED" and not 0 <= self.wsed_past_samples < self.window_length:
            raise ValueError("WSED needs wsed_past_samples + 1 <= window_length")
        if self.detector == "msED" and not 1 <= self.msed_slots <= self.window_length:
            raise ValueError("msED needs 1 <= slots <= window_length")
        if self.weight_scheme is not None:
            object.__setattr__(self, "weight_scheme", WeightScheme(self.weight_scheme))

    @property
    def scheme(self) -> WeightScheme:
        if self.weight_scheme is not None:
            return self.weight_scheme
        # oracle states: uniform is optimal; estimated states: exponential
        return WeightScheme.EXPONENTIAL if self.detector == "EM-mWSED" else WeightScheme.UNIFORM


@dataclass(frozen=True)
class OperatingPoint:
    pf: float
    pd: float
    threshold: float


def selection_weights(mask, scheme=WeightScheme.UNIFORM) -> np.ndarray:
    """Weights over the True entries of ``mask`` (last axis), normalized to sum to one.

    Exponential weights grow as e^d toward the newest index.
    """
    mask = np.asarray(mask, dtype=bool)
    D = mask.shape[-1]
    if WeightScheme(scheme) is WeightScheme.EXPONENTIAL:
        base = np.exp(np.arange(D) - (D - 1.0))
    else:
        base = np.ones(D)
    w = np.where(mask, base, 0.0)
    total = w.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise ValueError("empty selection")
    return w / total


def exponential_weights(n: int) -> np.ndarray:
    return selection_weights(np.ones(n, bool), WeightScheme.EXPONENTIAL)


def _window(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] == 0:
        raise ValueError("empty observation window")
    return x


def ed_statistic(window):
    """Conventional ED: the present (newest) sample."""
    return _window(window)[..., -1]


def wsed_statistic(window, n_samples: int = 4):
    """Exponentially weighted sum of the ``n_samples`` most recent samples."""
    x = _window(window)
    if not 1 <= n_samples <= x.shape[-1]:
        raise ValueError(f"n_samples must be in [1, {x.shape[-1]}], got {n_samples}")
    return x[..., -n_samples:] @ exponential_weights(n_samples)


def mwsed_statistic(window, states, scheme=WeightScheme.UNIFORM):
    """Weighted sum over samples whose state matches the present state.

    Works on a single window or a batch (leading axes); the present index
    always selects itself, so the statistic is always defined.
    """
    x = _window(window)
    s = np.asarray(states)
    if s.shape != x.shape:
        raise ValueError("states and window must have the same shape")
    mask = s == s[..., -1:]
    w = selection_weights(mask, scheme)
    return np.sum(w * x, axis=-1)


def mwsed_moments(weights, cfg: ChannelConfig, n_avg: int = 1):
    """(m0, v0^2, m1, v1^2) of mWSED over C samples with the given simplex weights.

    ``n_avg`` divides the per-sample variances, covering statistics that were
    averaged over ``n_avg`` independent SUs by consensus (1 = single SU).
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or len(w) == 0 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("weights must lie on the probability simplex")
    mu0, var0, mu1, var1 = ed_moments(cfg)
    sw, sw2 = w.sum(), float(np.dot(w, w))
    return mu0 * sw, var0 * sw2 / n_avg, mu1 * sw, var1 * sw2 / n_avg


def mwsed_operating_point(threshold: float, weights, cfg: ChannelConfig,
                          n_avg: int = 1) -> OperatingPoint:
    m0, v0, m1, v1 = mwsed_moments(weights, cfg, n_avg)
    pf = q_function((threshold - m0) / math.sqrt(v0))
    pd = q_function((threshold - m1) / math.sqrt(v1))
    return OperatingPoint(pf, pd, threshold)


def threshold_for_pf(target_pf: float, m0: float, v0: float) -> float:
    """Threshold giving false-alarm rate ``target_pf`` for H0 ~ N(m0, v0**2).

    ``v0`` is a standard deviation.
    """
    if not v0 > 0:
        raise ValueError("v0 must be positive")
    return m0 + v0 * q_inverse(target_pf)


def ied_statistic(window):
    """Improved ED baseline: uniform average over the whole window."""
    return _window(window).mean(axis=-1)


def msed_statistic(window, K: int = 2):
    """Smallest of the K most recent samples.

    ``msed_statistic >= lam`` is exactly the AND rule of :func:`msed_decide`,
    which lets msED be swept like any other scalar statistic.
    """
    x = _window(window)
    if not 1 <= K <= x.shape[-1]:
        raise ValueError(f"K must be in [1, {x.shape[-1]}]")
    return x[..., -K:].min(axis=-1)


def msed_decide(window, K: int, threshold: float):
    return decide(msed_statistic(window, K), threshold)


def decide(statistic, threshold):
    """H1 (1) when the statistic reaches the threshold, else H0 (0)."""
    out = (np.asarray(statistic) >= threshold).astype(np.int8)
    return int(out) if out.ndim == 0 else out
