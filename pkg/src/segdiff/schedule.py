"""Diffusion variance schedule: the linear beta ramp and derived tables.

Arrays are 1-indexed by timestep: ``beta[t]`` is valid for t in 1..T, with a
placeholder at index 0. ``alpha_bar[0] = 1`` so that the posterior variance
at t=1 is exactly zero.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

BETA_START = 1e-4
BETA_END = 2e-2


@dataclass(frozen=True)
class DiffusionSchedule:
    """Precomputed schedule tables for a fixed step count T."""

    T: int
    beta: np.ndarray  # [0, beta_1 .. beta_T]
    alpha: np.ndarray  # [0, alpha_1 .. alpha_T]
    alpha_bar: np.ndarray  # [1, abar_1 .. abar_T]
    beta_tilde: np.ndarray  # [0, btilde_1 .. btilde_T]

    def sigma(self, t):
        """Reverse-process noise scale sqrt(beta_tilde_t); zero at t=1."""
        self._check_t(t)
        return float(np.sqrt(self.beta_tilde[t]))

    def _check_t(self, t):
        if not 1 <= t <= self.T:
            raise IndexError(f"timestep {t} outside [1, {self.T}]")


def make_schedule(T):
    """Build the schedule for T steps: beta ramps linearly from 1e-4 to 2e-2."""
    if T < 2:
        raise ConfigurationError(f"schedule needs T >= 2, got {T}")
    t = np.arange(0, T + 1, dtype=np.float64)
    beta = (BETA_START * (T - t) + BETA_END * (t - 1)) / (T - 1)
    beta[0] = 0.0
    alpha = 1.0 - beta
    alpha_bar = np.empty(T + 1)
    alpha_bar[0] = 1.0
    alpha_bar[1:] = np.cumprod(alpha[1:])
    beta_tilde = np.zeros(T + 1)
    beta_tilde[1:] = (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]) * beta[1:]
    return DiffusionSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar, beta_tilde=beta_tilde)
