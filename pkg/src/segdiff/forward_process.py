"""Forward noising process: sample x_t directly from x_0 at any timestep."""

from dataclasses import dataclass

import numpy as np

from .schedule import DiffusionSchedule
from .tensor import Tensor


@dataclass
class NoisedSample:
    """A noised map x_t together with the noise that produced it (the
    regression target)."""

    x_t: Tensor
    epsilon: Tensor
    t: int


def sample_xt(x0, t, sched: DiffusionSchedule, rng, epsilon=None):
    """Draw x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps, eps ~ N(0, I).

    ``epsilon`` may be supplied to make the draw deterministic (tests).
    ``t`` may be an int or a per-batch-element int array.
    """
    tarr = np.asarray(t)
    if np.any(tarr < 1) or np.any(tarr > sched.T):
        raise IndexError(f"timestep {t} outside [1, {sched.T}]")
    if epsilon is None:
        epsilon = rng.standard_normal(x0.shape)
    else:
        epsilon = np.asarray(epsilon, dtype=np.float64)
    abar = sched.alpha_bar[tarr]
    if tarr.ndim > 0:
        abar = abar.reshape((-1,) + (1,) * (x0.data.ndim - 1))
    x_t = np.sqrt(abar) * x0.data + np.sqrt(1.0 - abar) * epsilon
    return NoisedSample(x_t=Tensor(x_t), epsilon=Tensor(epsilon), t=t)
