"""Reverse-process sampling conditioned on an image, plus multi-run
ensembling into a per-pixel probability map."""

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .schedule import DiffusionSchedule
from .tensor import Tensor, no_grad


@dataclass
class GenerationTrace:
    x_final: Tensor
    seed: int
    steps_used: int
    wall_time: float
    snapshots: dict = field(default_factory=dict)  # t -> ndarray


@dataclass
class EnsembleResult:
    mean_map: Tensor  # clamped to [0, 1]
    generations: list  # of (B, 1, H, W) ndarrays
    seeds: list
    n: int


def average_maps(generations, seeds=None):
    """Clamped mean of generations. When seeds are given, members are summed
    in seed order, making the result exactly independent of list order."""
    if seeds is not None:
        order = np.argsort(seeds, kind="stable")
        generations = [generations[i] for i in order]
    total = np.zeros_like(generations[0])
    for g in generations:
        total += g
    return np.clip(total / len(generations), 0.0, 1.0)


def reverse_update(x_t, eps_hat, t, sched: DiffusionSchedule, z):
    """One reverse step given a noise prediction.

    x_{t-1} = (x_t - (1 - a_t)/sqrt(1 - abar_t) * eps) / sqrt(a_t), plus the
    sqrt(beta_tilde_t) * z term, which is gated off at t = 1.
    """
    if not 1 <= t <= sched.T:
        raise IndexError(f"timestep {t} outside [1, {sched.T}]")
    a = sched.alpha[t]
    mean = (x_t - (1.0 - a) / np.sqrt(1.0 - sched.alpha_bar[t]) * eps_hat) / np.sqrt(a)
    if t > 1:
        mean = mean + np.sqrt(sched.beta_tilde[t]) * z
    return mean


def reverse_step(x_t, image, t, model, sched, z, image_features=None):
    """Predict the noise with the model, then apply ``reverse_update``."""
    eps_hat = model(Tensor(x_t), Tensor(image), t, image_features=image_features)
    return reverse_update(x_t, eps_hat.data, t, sched, z)


def generate(image, model, sched, seed, snapshot_at=()):
    """Run the full reverse chain from pure noise; image is (B, 3, H, W).

    Image features are encoded once and reused across all steps.
    """
    image = np.asarray(image, dtype=np.float64)
    B = image.shape[0]
    H, W = image.shape[2:]
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    snapshots = {}
    with no_grad():
        features = model.encode_image(Tensor(image))
        x = rng.standard_normal((B, 1, H, W))
        for t in range(sched.T, 0, -1):
            z = rng.standard_normal((B, 1, H, W))
            x = reverse_step(x, image, t, model, sched, z, image_features=features)
            if not np.all(np.isfinite(x)):
                raise FloatingPointError(f"non-finite values during reverse step t={t}")
            if t in snapshot_at:
                snapshots[t] = x.copy()
    return GenerationTrace(
        x_final=Tensor(x),
        seed=seed,
        steps_used=sched.T,
        wall_time=time.perf_counter() - start,
        snapshots=snapshots,
    )


def ensemble_generate(image, model, sched, n, base_seed, batch_generations=True):
    """Run ``n`` seeded generations (seeds base_seed .. base_seed + n - 1) and
    average them into a probability map.

    With ``batch_generations`` the n runs execute as one batch; per-sample
    math is unchanged, so results match sequential runs.
    """
    if n < 1:
        raise ConfigurationError(f"ensemble size must be >= 1, got {n}")
    image = np.asarray(image, dtype=np.float64)
    B = image.shape[0]
    H, W = image.shape[2:]
    seeds = [base_seed + i for i in range(n)]
    if not batch_generations or n == 1:
        generations = [generate(image, model, sched, s).x_final.data for s in seeds]
    else:
        rngs = [np.random.default_rng(s) for s in seeds]
        tiled = np.repeat(image, n, axis=0)  # (B*n, ...) grouped per image
        with no_grad():
            feats = model.encode_image(Tensor(image))
            tiled_feats = Tensor(np.repeat(feats.data, n, axis=0)) if feats is not None else None
            x = np.concatenate(
                [r.standard_normal((B, 1, H, W)) for r in rngs], axis=0
            ).reshape(n, B, 1, H, W).transpose(1, 0, 2, 3, 4).reshape(B * n, 1, H, W)
            for t in range(sched.T, 0, -1):
                z = np.concatenate(
                    [r.standard_normal((B, 1, H, W)) for r in rngs], axis=0
                ).reshape(n, B, 1, H, W).transpose(1, 0, 2, 3, 4).reshape(B * n, 1, H, W)
                x = reverse_step(x, tiled, t, model, sched, z, image_features=tiled_feats)
                if not np.all(np.isfinite(x)):
                    raise FloatingPointError(f"non-finite values during reverse step t={t}")
        stacked = x.reshape(B, n, 1, H, W)
        generations = [np.ascontiguousarray(stacked[:, i]) for i in range(n)]
    mean_map = average_maps(generations, seeds)
    return EnsembleResult(mean_map=Tensor(mean_map), generations=generations, seeds=seeds, n=n)


def binarize(mean_map, threshold=0.5):
    """Pixelwise threshold; values exactly at the threshold go to foreground."""
    if not 0.0 < threshold < 1.0:
        raise ConfigurationError(f"threshold must be in (0, 1), got {threshold}")
    data = mean_map.data if isinstance(mean_map, Tensor) else np.asarray(mean_map)
    return (data >= threshold).astype(np.float64)
