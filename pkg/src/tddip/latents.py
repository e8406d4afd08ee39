"""Latent anchors and their piecewise-linear temporal interpolation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SCENARIOS = (
    "fine-interpolation",
    "extrapolation",
    "fresh-random",
    "perturbed",
    "scalar",
    "independent-per-frame",
)

PERTURB_ENERGY = 0.10


@dataclass
class LatentAnchors:
    anchors: np.ndarray  # (A, ch, h, w)
    lo: float
    hi: float
    seed: int

    @property
    def count(self) -> int:
        return self.anchors.shape[0]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.anchors.shape[1:]


def sample_anchors(A: int, shape, lo: float = 0.0, hi: float = 0.1, seed: int = 0) -> LatentAnchors:
    if A < 2:
        raise ValueError(f"need at least two anchors, got {A}")
    if not lo < hi:
        raise ValueError(f"empty sampling range [{lo}, {hi})")
    rng = np.random.default_rng(seed)
    return LatentAnchors(rng.uniform(lo, hi, size=(A, *tuple(shape))), float(lo), float(hi), seed)


@dataclass
class LatentSchedule:
    """Anchors placed at equi-spaced times covering [0, K-1]."""

    anchors: LatentAnchors
    K: int

    def __post_init__(self):
        if self.K < 2:
            raise ValueError("a schedule needs at least two frames")

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.K - 1, self.anchors.count)

    @property
    def t_max(self) -> float:
        return float(self.K - 1)

    def segment(self, t: float) -> tuple[int, float]:
        """Chunk index and in-chunk fraction for time ``t``."""
        times = self.times
        tau = int(np.searchsorted(times, t, side="right")) - 1
        tau = min(max(tau, 0), len(times) - 2)
        alpha = (t - times[tau]) / (times[tau + 1] - times[tau])
        return tau, alpha


def latent_at(t: float, schedule: LatentSchedule) -> np.ndarray:
    if not 0.0 <= t <= schedule.t_max:
        raise ValueError(f"t={t} outside [0, {schedule.t_max}]; use scenario_latents to extrapolate")
    z = schedule.anchors.anchors
    tau, alpha = schedule.segment(t)
    if alpha == 0.0:
        return z[tau].copy()
    if alpha == 1.0:
        return z[tau + 1].copy()
    return (1.0 - alpha) * z[tau] + alpha * z[tau + 1]


def _extrapolate(t: float, schedule: LatentSchedule) -> np.ndarray:
    if 0.0 <= t <= schedule.t_max:
        return latent_at(t, schedule)
    z, times = schedule.anchors.anchors, schedule.times
    if t > schedule.t_max:
        slope = (z[-1] - z[-2]) / (times[-1] - times[-2])
        return z[-1] + (t - times[-1]) * slope
    slope = (z[1] - z[0]) / (times[1] - times[0])
    return z[0] + (t - times[0]) * slope


def perturb(z: np.ndarray, rng: np.random.Generator, lo: float, hi: float,
            energy: float = PERTURB_ENERGY) -> np.ndarray:
    """Add uniform noise (same family as the anchors) with ||n||^2 / ||z||^2 = energy."""
    if energy == 0:
        return z.copy()
    noise = rng.uniform(lo, hi, size=z.shape)
    noise *= np.sqrt(energy) * np.linalg.norm(z) / np.linalg.norm(noise)
    return z + noise


def scenario_latents(kind: str, schedule: LatentSchedule, times=None, seed: int = 0,
                     energy: float = PERTURB_ENERGY) -> np.ndarray:
    """Latent sequence for one of the inference/ablation scenarios.

    ``times`` defaults to the integer frame times ``0..K-1``.  Returns an
    array of shape (len(times), ch, h, w); the ``scalar`` kind returns
    (len(times), ch, 1, 1) latents and needs a generator built for 1x1 input.
    """
    if kind not in SCENARIOS:
        raise ValueError(f"unknown scenario {kind!r}; choose from {', '.join(SCENARIOS)}")
    a = schedule.anchors
    if times is None:
        times = np.arange(schedule.K, dtype=float)
    times = np.asarray(times, dtype=float)
    rng = np.random.default_rng(seed)
    if kind == "fine-interpolation":
        return np.stack([latent_at(t, schedule) for t in times])
    if kind == "extrapolation":
        return np.stack([_extrapolate(t, schedule) for t in times])
    if kind == "fresh-random":
        fresh = LatentSchedule(sample_anchors(a.count, a.shape, a.lo, a.hi, seed + 7919), schedule.K)
        return np.stack([latent_at(t, fresh) for t in np.clip(times, 0, schedule.t_max)])
    if kind == "perturbed":
        return np.stack([perturb(latent_at(t, schedule), rng, a.lo, a.hi, energy) for t in times])
    if kind == "scalar":
        ch = a.shape[0]
        scal = LatentSchedule(sample_anchors(a.count, (ch, 1, 1), a.lo, a.hi, seed), schedule.K)
        return np.stack([latent_at(t, scal) for t in times])
    # independent-per-frame
    return rng.uniform(a.lo, a.hi, size=(len(times), *a.shape))


def lag1_correlation(seq: np.ndarray) -> float:
    """Pearson correlation between consecutive latents, pooled over entries."""
    seq = np.asarray(seq).reshape(len(seq), -1)
    a, b = seq[:-1].ravel(), seq[1:].ravel()
    return float(np.corrcoef(a, b)[0, 1])
