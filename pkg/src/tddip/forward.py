"""Golden-angle radial sampling and the nonuniform Fourier forward model.

Phase convention: pixel ``x[i1, i2]`` sits at the centered integer position
``xi = (i1 - N/2, i2 - N/2)`` and a k-space sample at ``(kx, ky)`` (radians
per pixel) is ``sum_xi x[xi] * exp(-1j * (kx*xi1 + ky*xi2))``.  The DC sample
is therefore the plain image sum, and ``kx`` pairs with the first array axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

GOLDEN_ANGLE_DEG = 180.0 * 2.0 / (1.0 + math.sqrt(5.0))  # 111.246...
DEFAULT_DTHETA = math.radians(111.25)


@dataclass(frozen=True)
class TrajectoryConfig:
    n_image: int = 64
    theta0: float = 0.0
    dtheta: float = DEFAULT_DTHETA
    dt: float = 1.0
    m_omega: int | None = None

    def __post_init__(self):
        if self.m_omega is None:
            object.__setattr__(self, "m_omega", 2 * self.n_image)
        if self.m_omega != 2 * self.n_image:
            raise ValueError(f"m_omega must be 2*n_image ({2 * self.n_image}), got {self.m_omega}")
        if self.n_image < 2 or self.n_image % 2:
            raise ValueError(f"n_image must be even and >= 2, got {self.n_image}")


def spoke_angle(k: int, cfg: TrajectoryConfig) -> float:
    if k < 0:
        raise ValueError("spoke index must be non-negative")
    return (cfg.theta0 + k * cfg.dtheta) % (2 * math.pi)


def readout_radii(cfg: TrajectoryConfig) -> np.ndarray:
    m = np.arange(cfg.m_omega)
    return np.pi * (m - cfg.m_omega // 2) / cfg.n_image


def radial_coords(angle: float, cfg: TrajectoryConfig) -> np.ndarray:
    """(m_omega, 2) array of (kx, ky) along one spoke, wrapped into [-pi, pi)."""
    w = readout_radii(cfg)
    k = np.stack([w * math.cos(angle), w * math.sin(angle)], axis=1)
    # +pi and -pi are the same sample for integer pixel positions
    return np.where(k >= np.pi, k - 2 * np.pi, k)


def density_weights(cfg: TrajectoryConfig) -> np.ndarray:
    """Ramp weights |omega| with a small positive floor at DC."""
    w = np.abs(readout_radii(cfg))
    w[cfg.m_omega // 2] = (np.pi / cfg.n_image) / 4
    return w


def _check_coords(coords) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    if np.any(coords < -np.pi) or np.any(coords >= np.pi):
        raise ValueError("k-space coordinates must lie in [-pi, pi)^2")
    return coords


def _centered(n: int) -> np.ndarray:
    return np.arange(n) - n // 2


def nudft_apply(x, coords) -> np.ndarray:
    """Exact type-2 nonuniform DFT (reference path)."""
    x = np.asarray(x, dtype=np.complex128)
    coords = _check_coords(coords)
    xi1 = _centered(x.shape[0])
    xi2 = _centered(x.shape[1])
    e1 = np.exp(-1j * np.outer(coords[:, 0], xi1))
    e2 = np.exp(-1j * np.outer(coords[:, 1], xi2))
    return np.einsum("pi,ij,pj->p", e1, x, e2)


def nudft_adjoint(y, coords, n_image: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.complex128).reshape(-1)
    coords = _check_coords(coords)
    if y.size != coords.shape[0]:
        raise ValueError(f"{y.size} samples for {coords.shape[0]} coordinates")
    xi = _centered(n_image)
    e1 = np.exp(1j * np.outer(coords[:, 0], xi))
    e2 = np.exp(1j * np.outer(coords[:, 1], xi))
    return (e1 * y[:, None]).T @ e2


@dataclass(frozen=True)
class GridConfig:
    oversampling: float = 2.0
    width: int = 4

    @property
    def beta(self) -> float:
        # Beatty et al. (2005) choice for minimal aliasing
        a, w = self.oversampling, self.width
        return math.pi * math.sqrt((w / a) ** 2 * (a - 0.5) ** 2 - 0.8)


def kaiser_bessel(u, width: int, beta: float) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    arg = 1.0 - (2.0 * u / width) ** 2
    out = np.zeros_like(u)
    inside = arg >= 0
    out[inside] = np.i0(beta * np.sqrt(arg[inside]))
    return out


def _kb_transform(f, width: int, beta: float) -> np.ndarray:
    """Continuous Fourier transform of the KB kernel at grid frequency f (cycles/sample)."""
    z = np.sqrt(beta ** 2 - (np.pi * width * np.asarray(f, dtype=np.float64)) ** 2 + 0j)
    return np.real(width * np.sinh(z) / z)


class NudftOperator:
    """Exact sampling operator at fixed coordinates (separable evaluation)."""

    def __init__(self, coords, n_image: int):
        self.coords = _check_coords(coords)
        self.n_image = n_image
        xi = _centered(n_image)
        self._e1 = np.exp(-1j * np.outer(self.coords[:, 0], xi))
        self._e2 = np.exp(-1j * np.outer(self.coords[:, 1], xi))

    @property
    def n_samples(self) -> int:
        return self.coords.shape[0]

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x)
        if x.ndim == 3:
            return np.stack([self.apply(xc) for xc in x])
        return np.sum((self._e1 @ x) * self._e2, axis=1)

    def adjoint(self, y) -> np.ndarray:
        y = np.asarray(y)
        if y.ndim == 2:
            return np.stack([self.adjoint(yc) for yc in y])
        return (np.conj(self._e1) * y[:, None]).T @ np.conj(self._e2)


class NufftOperator:
    """Kaiser-Bessel gridded NuFFT with precomputed interpolation table.

    Forward: deapodize, zero-pad onto the oversampled grid, FFT, interpolate.
    The adjoint runs the transposed sequence, so the pair is an exact adjoint
    of each other even though both only approximate the NUDFT.
    """

    def __init__(self, coords, n_image: int, grid: GridConfig = GridConfig()):
        self.coords = _check_coords(coords)
        self.n_image = n_image
        self.grid = grid
        g = int(round(grid.oversampling * n_image))
        if grid.width >= g:
            raise ValueError(f"kernel width {grid.width} does not fit the {g}-point grid")
        self.g = g
        w, beta = grid.width, grid.beta
        xi = _centered(n_image)
        apod = _kb_transform(xi / g, w, beta)
        self._deapod = 1.0 / np.outer(apod, apod)
        self._pos = np.mod(xi, g)

        u = self.coords * (g / (2 * np.pi))  # fractional grid positions
        start = np.floor(u - w / 2).astype(int) + 1  # (P, 2)
        offs = np.arange(w)
        i1 = start[:, 0:1] + offs  # (P, w)
        i2 = start[:, 1:2] + offs
        w1 = kaiser_bessel(u[:, 0:1] - i1, w, beta)
        w2 = kaiser_bessel(u[:, 1:2] - i2, w, beta)
        rows = np.repeat(np.arange(len(u)), w * w)
        cols = (np.mod(i1, g)[:, :, None] * g + np.mod(i2, g)[:, None, :]).reshape(-1)
        vals = (w1[:, :, None] * w2[:, None, :]).reshape(-1)
        self._interp = sp.csr_matrix((vals, (rows, cols)), shape=(len(u), g * g))
        self._interp_t = self._interp.T.tocsr()

    @property
    def n_samples(self) -> int:
        return self.coords.shape[0]

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.complex128)
        stack = x.ndim == 3
        xs = x if stack else x[None]
        pad = np.zeros((xs.shape[0], self.g, self.g), dtype=np.complex128)
        pad[np.ix_(np.arange(xs.shape[0]), self._pos, self._pos)] = xs * self._deapod
        k = np.fft.fft2(pad).reshape(xs.shape[0], -1)
        y = (self._interp @ k.T).T
        return y if stack else y[0]

    def adjoint(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.complex128)
        stack = y.ndim == 2
        ys = y if stack else y[None]
        k = (self._interp_t @ ys.T).T.reshape(ys.shape[0], self.g, self.g)
        pad = np.fft.ifft2(k) * (self.g * self.g)
        x = pad[np.ix_(np.arange(ys.shape[0]), self._pos, self._pos)] * self._deapod
        return x if stack else x[0]


def nufft_apply(x, coords, grid_cfg: GridConfig = GridConfig()) -> np.ndarray:
    x = np.asarray(x)
    return NufftOperator(coords, x.shape[-1], grid_cfg).apply(x)


def nufft_adjoint(y, coords, n_image: int, grid_cfg: GridConfig = GridConfig()) -> np.ndarray:
    return NufftOperator(coords, n_image, grid_cfg).adjoint(y)


def window_indices(k0: int, n: int, K: int) -> list[int]:
    """Indices of the ``n`` spokes shared by frame ``k0`` (one-sided at the ends)."""
    if n % 2 == 0 or n < 1:
        raise ValueError(f"window size must be odd and positive, got {n}")
    if n > K:
        raise ValueError(f"window size {n} exceeds the {K} available spokes")
    if not 0 <= k0 < K:
        raise ValueError(f"center {k0} outside [0, {K - 1}]")
    lo = min(max(k0 - (n - 1) // 2, 0), K - n)
    return list(range(lo, lo + n))


@dataclass
class Spoke:
    index: int
    angle: float
    samples: np.ndarray  # (coils, m_omega) complex


@dataclass
class SpokeStream:
    trajectory: TrajectoryConfig
    spokes: list[Spoke]
    coils: int

    def __post_init__(self):
        for i, s in enumerate(self.spokes):
            if s.index != i:
                raise ValueError(f"spoke indices must be contiguous from 0, found {s.index} at {i}")
            if s.samples.shape != (self.coils, self.trajectory.m_omega):
                raise ValueError(f"spoke {i} samples have shape {s.samples.shape}")

    @property
    def K(self) -> int:
        return len(self.spokes)

    def angles(self) -> np.ndarray:
        return np.array([s.angle for s in self.spokes])

    def samples(self) -> np.ndarray:
        """(K, coils, m_omega) array."""
        if not self.spokes:
            return np.zeros((0, self.coils, self.trajectory.m_omega), dtype=np.complex128)
        return np.stack([s.samples for s in self.spokes])

    def window_data(self, members) -> np.ndarray:
        """(coils, n*m_omega) concatenation of the member spokes, member-major."""
        return np.concatenate([self.spokes[m].samples for m in members], axis=1)


@dataclass
class SystemWindow:
    center: int
    members: list[int]
    coords: list[np.ndarray]

    def all_coords(self) -> np.ndarray:
        return np.concatenate(self.coords, axis=0)


def make_window(stream_or_cfg, k0: int, n: int, K: int | None = None,
                angles=None) -> SystemWindow:
    """Build the window around ``k0`` from a stream (or a trajectory + K)."""
    if isinstance(stream_or_cfg, SpokeStream):
        cfg, K, angles = stream_or_cfg.trajectory, stream_or_cfg.K, stream_or_cfg.angles()
    else:
        cfg = stream_or_cfg
        if angles is None:
            angles = [spoke_angle(k, cfg) for k in range(K)]
    members = window_indices(k0, n, K)
    return SystemWindow(k0, members, [radial_coords(angles[m], cfg) for m in members])


@dataclass
class CoilMaps:
    maps: np.ndarray  # (C, N, N) complex

    def __post_init__(self):
        self.maps = np.asarray(self.maps, dtype=np.complex128)
        if self.maps.ndim != 3:
            raise ValueError("coil maps must be (C, N, N)")
        if not np.all(np.isfinite(self.maps)):
            raise ValueError("coil maps contain non-finite values")

    @property
    def count(self) -> int:
        return self.maps.shape[0]

    def rss(self) -> np.ndarray:
        return np.sqrt(np.sum(np.abs(self.maps) ** 2, axis=0))


@dataclass
class SystemOperator:
    """Multi-coil windowed operator: x -> (coil, n*m_omega) samples."""

    window: SystemWindow
    coils: CoilMaps
    method: str = "gridded"
    grid: GridConfig = field(default_factory=GridConfig)

    def __post_init__(self):
        n = self.coils.maps.shape[-1]
        pts = self.window.all_coords()
        if self.method == "gridded":
            self.op = NufftOperator(pts, n, self.grid)
        elif self.method == "exact":
            self.op = NudftOperator(pts, n)
        else:
            raise ValueError(f"unknown NuFFT method {self.method!r}")

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.complex128)
        if x.shape != self.coils.maps.shape[1:]:
            raise ValueError(f"image {x.shape} does not match coil maps {self.coils.maps.shape[1:]}")
        return self.op.apply(self.coils.maps * x)

    def adjoint(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.complex128)
        if y.shape != (self.coils.count, self.op.n_samples):
            raise ValueError(f"measurements {y.shape} do not match ({self.coils.count}, {self.op.n_samples})")
        return np.sum(np.conj(self.coils.maps) * self.op.adjoint(y), axis=0)


def apply_system(x, window: SystemWindow, coils: CoilMaps, method: str = "gridded") -> np.ndarray:
    return SystemOperator(window, coils, method).apply(x)
