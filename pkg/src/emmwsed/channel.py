"""Dynamic primary user and energy-detector sample generation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .stats import q_function


@dataclass(frozen=True)
class ChannelConfig:
    """Physical parameters shared by every SU in a scenario.

    ``snr_db`` is the SU-level SNR eta in dB.  ``alpha`` is P(H0 | H1 before)
    and ``beta`` is P(H1 | H0 before).
    """

    L: int = 12
    noise_power: float = 1.0
    snr_db: float = -3.0
    alpha: float = 0.1
    beta: float = 0.1

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 1:
            raise ValueError(f"L must be a positive integer, got {self.L!r}")
        if not self.noise_power > 0:
            raise ValueError("noise_power must be positive")
        if math.isnan(self.snr_db) or self.snr_db == math.inf:
            raise ValueError("snr_db must be finite (or -inf for no signal)")
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v!r}")

    @property
    def eta(self) -> float:
        return 10.0 ** (self.snr_db / 10.0)

    @property
    def signal_amplitude(self) -> float:
        """Constant per-sample amplitude, so the window signal energy is eta*L*noise_power."""
        return math.sqrt(self.eta * self.noise_power)

    @property
    def steady_state_active(self) -> float:
        total = self.alpha + self.beta
        return 0.5 if total == 0 else self.beta / total


def simulate_pu_states(cfg: ChannelConfig, D: int, rng: np.random.Generator,
                       initial_state: int | None = None) -> np.ndarray:
    """Two-state Markov PU activity over ``D`` sensing intervals (0 = idle, 1 = active).

    The first state is drawn from the steady state unless ``initial_state`` is given.
    """
    if D < 1:
        raise ValueError("D must be >= 1")
    u = rng.random(D)
    states = np.empty(D, dtype=np.int8)
    if initial_state is None:
        s = 1 if u[0] < cfg.steady_state_active else 0
    else:
        s = int(initial_state)
    states[0] = s
    p_stay_on = 1.0 - cfg.alpha
    for d in range(1, D):
        s = 1 if u[d] < (p_stay_on if s else cfg.beta) else 0
        states[d] = s
    return states


def generate_energy_sample(state: int, cfg: ChannelConfig, rng: np.random.Generator) -> float:
    """One energy statistic from L explicit real noise (plus signal) samples."""
    n = rng.normal(0.0, math.sqrt(cfg.noise_power), size=cfg.L)
    if state:
        n = n + cfg.signal_amplitude
    return float(np.dot(n, n))


def generate_energy_samples(states, cfg: ChannelConfig, rng: np.random.Generator,
                            n_sus: int | None = None) -> np.ndarray:
    """Energy statistics for every interval in ``states``, vectorized.

    Draws from the exact laws of :func:`generate_energy_sample`: a scaled
    central chi-squared with L degrees of freedom when idle, and a scaled
    noncentral one with noncentrality L*eta when active.  With ``n_sus``
    the result has shape ``(n_sus, len(states))``, one independent row per SU.
    """
    states = np.asarray(states)
    shape = states.shape if n_sus is None else (n_sus,) + states.shape
    active = np.broadcast_to(states.astype(bool), shape)
    out = rng.chisquare(cfg.L, size=shape)
    n_on = int(active.sum())
    if n_on and cfg.eta > 0:
        out[active] = rng.noncentral_chisquare(cfg.L, cfg.L * cfg.eta, size=n_on)
    return out * cfg.noise_power


def ed_moments(cfg: ChannelConfig) -> tuple[float, float, float, float]:
    """Gaussian-approximation moments (mu0, var0, mu1, var1) of the ED statistic."""
    L, s2, eta = cfg.L, cfg.noise_power, cfg.eta
    return (L * s2, 2 * L * s2 ** 2, (1 + eta) * L * s2, 2 * (1 + 2 * eta) * L * s2 ** 2)


def ed_operating_point(threshold: float, cfg: ChannelConfig) -> tuple[float, float]:
    """(Pf, Pd) of the single-sample energy detector at ``threshold``."""
    mu0, var0, mu1, var1 = ed_moments(cfg)
    if math.isinf(threshold):
        return (0.0, 0.0) if threshold > 0 else (1.0, 1.0)
    pf = q_function((threshold - mu0) / math.sqrt(var0))
    pd = q_function((threshold - mu1) / math.sqrt(var1))
    return pf, pd
