"""Analytic beating-heart phantom, synthetic coil maps, k-space simulation."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from tddip.forward import (CoilMaps, Spoke, SpokeStream, SystemOperator, SystemWindow,
                           TrajectoryConfig, radial_coords, spoke_angle)


@dataclass
class FrameSeries:
    frames: np.ndarray  # (K, N, N) complex
    dt: float = 1.0
    times: np.ndarray | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.complex128)
        if self.frames.ndim != 3 or self.frames.shape[0] < 1:
            raise ValueError(f"frames must be (K, N, N) with K >= 1, got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("frame series contains non-finite values")
        if self.times is None:
            self.times = np.arange(self.K, dtype=float) * self.dt
        self.times = np.asarray(self.times, dtype=float)

    @property
    def K(self) -> int:
        return self.frames.shape[0]

    @property
    def n_image(self) -> int:
        return self.frames.shape[-1]


@dataclass(frozen=True)
class PhantomConfig:
    n_image: int = 64
    K: int = 20
    heart_center: tuple[float, float] = (0.12, -0.18)
    inner_radius: float = 0.24
    outer_radius: float = 0.36
    depth: float = 0.45
    beats: float = 2.0
    jitter: float = 0.2
    jitter_period: float = 1.7  # in units of K
    phase_roll: float = 1.0
    edge: float = 1.0  # edge transition width in pixels
    noise: float = 0.05
    blood: float = 1.0
    myocardium: float = 0.3
    # (center1, center2, semi-axis1, semi-axis2, additive value)
    ellipses: tuple = (
        (0.0, 0.0, 0.88, 0.74, 0.45),
        (-0.05, 0.42, 0.34, 0.18, -0.25),
        (-0.35, -0.40, 0.16, 0.22, 0.35),
        (0.55, 0.15, 0.10, 0.12, 0.30),
    )

    def __post_init__(self):
        if not (0 < self.inner_radius < self.outer_radius):
            raise ValueError("need 0 < inner_radius < outer_radius")
        if not 0 <= self.depth < 1:
            raise ValueError("contraction depth must be in [0, 1)")
        if abs(self.jitter) >= max(self.depth, 1e-12) and self.jitter != 0:
            raise ValueError("jitter amplitude must stay below the contraction depth")

    def to_dict(self) -> dict:
        return asdict(self)


def _smooth_inside(dist, width):
    """Anti-aliased indicator of ``dist < 0`` with a smoothstep over ``width``."""
    s = np.clip(0.5 - dist / width, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def grid_coords(n: int) -> tuple[np.ndarray, np.ndarray]:
    u = (np.arange(n) - n // 2) / (n / 2)
    return np.meshgrid(u, u, indexing="ij")


def inner_radius(t: float, cfg: PhantomConfig) -> float:
    jit = cfg.jitter * np.sin(2 * np.pi * t / (cfg.jitter_period * cfg.K) + 0.5)
    c = 0.5 + 0.5 * np.cos(2 * np.pi * cfg.beats * t / cfg.K + jit)
    return cfg.inner_radius * (1.0 - cfg.depth * c)


def phantom_frame(t: float, cfg: PhantomConfig) -> np.ndarray:
    """Complex image of the phantom at (possibly fractional) time ``t``."""
    u1, u2 = grid_coords(cfg.n_image)
    px = 2.0 / cfg.n_image
    w = cfg.edge * px
    img = np.zeros_like(u1)
    for c1, c2, a1, a2, val in cfg.ellipses:
        # radial distance scaled to pixels along the ellipse normal (approx.)
        r = np.sqrt(((u1 - c1) / a1) ** 2 + ((u2 - c2) / a2) ** 2)
        img += val * _smooth_inside((r - 1.0) * min(a1, a2), w)
    h1, h2 = cfg.heart_center
    rho = np.hypot(u1 - h1, u2 - h2)
    r_in = inner_radius(t, cfg)
    outer = _smooth_inside(rho - cfg.outer_radius, w)
    inner = _smooth_inside(rho - r_in, w)
    heart_val = cfg.myocardium * (outer - inner) + cfg.blood * inner
    img = img * (1.0 - outer) + heart_val
    phase = cfg.phase_roll * (0.6 * u1 + 0.4 * u2 + 0.3 * u1 * u1)
    return img * np.exp(1j * phase)


def heart_mask(cfg: PhantomConfig) -> np.ndarray:
    u1, u2 = grid_coords(cfg.n_image)
    return np.hypot(u1 - cfg.heart_center[0], u2 - cfg.heart_center[1]) < cfg.outer_radius


def make_cine_phantom(cfg: PhantomConfig, times=None) -> FrameSeries:
    if times is None:
        times = np.arange(cfg.K, dtype=float)
    times = np.asarray(times, dtype=float)
    return FrameSeries(np.stack([phantom_frame(t, cfg) for t in times]), 1.0, times)


def make_coil_maps(C: int, n_image: int, seed: int = 0, width: float = 0.9) -> CoilMaps:
    """Gaussian-bump sensitivities centred on evenly spaced points of a circle.

    ``C == 1`` returns the all-ones identity map.
    """
    if C < 1:
        raise ValueError("need at least one coil")
    if C == 1:
        return CoilMaps(np.ones((1, n_image, n_image), dtype=np.complex128))
    rng = np.random.default_rng(seed)
    u1, u2 = grid_coords(n_image)
    offset = rng.uniform(0, 2 * np.pi / C)
    maps = []
    for c in range(C):
        ang = offset + 2 * np.pi * c / C
        c1, c2 = np.cos(ang), np.sin(ang)
        mag = np.exp(-((u1 - c1) ** 2 + (u2 - c2) ** 2) / (2 * width ** 2))
        g1, g2 = rng.uniform(-0.8, 0.8, size=2)
        phase = rng.uniform(0, 2 * np.pi) + g1 * u1 + g2 * u2
        maps.append(mag * np.exp(1j * phase))
    return CoilMaps(np.stack(maps))


def simulate_stream(source, traj: TrajectoryConfig, coils: CoilMaps, noise: float = 0.0,
                    mode: str = "continuous", seed: int = 0, phases: int | None = None,
                    spokes_per_phase: int | None = None, method: str = "gridded") -> SpokeStream:
    """Sample radial spokes from a frame series or an analytic phantom.

    ``source`` is a :class:`FrameSeries` or a :class:`PhantomConfig`.  In
    ``continuous`` mode spoke ``k`` sees the image at time ``k``; in
    ``retrospective`` mode the image is frozen for each of ``phases`` blocks
    of ``spokes_per_phase`` consecutive spokes.
    """
    if mode == "continuous":
        K = source.K
        frame_of = list(range(K))
    elif mode == "retrospective":
        phases = phases if phases is not None else source.K
        spokes_per_phase = spokes_per_phase or 13
        K = phases * spokes_per_phase
        frame_of = [k // spokes_per_phase for k in range(K)]
    else:
        raise ValueError(f"unknown simulation mode {mode!r}")
    if isinstance(source, FrameSeries):
        if max(frame_of) >= source.K:
            raise ValueError(f"simulation needs {max(frame_of) + 1} frames, series has {source.K}")
        frame = lambda i: source.frames[i]  # noqa: E731
    else:
        frame = lambda i: phantom_frame(float(i), source)  # noqa: E731
    rng = np.random.default_rng(seed)
    spokes = []
    cache = {}
    for k in range(K):
        angle = spoke_angle(k, traj)
        win = SystemWindow(k, [k], [radial_coords(angle, traj)])
        i = frame_of[k]
        if i not in cache:
            cache = {i: frame(i)}
        y = SystemOperator(win, coils, method).apply(cache[i])
        if noise > 0:
            y = y + noise / np.sqrt(2) * (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape))
        spokes.append(Spoke(k, angle, y))
    return SpokeStream(traj, spokes, coils.count)


@dataclass
class DeskScenario:
    """Ground truth, coils and measurements for one simulated acquisition."""

    phantom: PhantomConfig
    truth: FrameSeries
    coils: CoilMaps
    stream: SpokeStream
    seed: int = 0
    extras: dict = field(default_factory=dict)


def desk_scenario(cfg: PhantomConfig = PhantomConfig(), C: int = 4, seed: int = 0,
                  traj: TrajectoryConfig | None = None) -> DeskScenario:
    traj = traj or TrajectoryConfig(cfg.n_image)
    coils = make_coil_maps(C, cfg.n_image, seed)
    truth = make_cine_phantom(cfg)
    stream = simulate_stream(truth, traj, coils, cfg.noise, "continuous", seed)
    return DeskScenario(cfg, truth, coils, stream, seed)
