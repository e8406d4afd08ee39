"""Temporal-TV compressed sensing by proximal gradient.

Minimizes ``||H X - Y||^2 + lam * ||D X||_1`` where ``D`` takes forward
differences between consecutive frames and the l1 norm is taken over real
and imaginary parts separately.  Frames are disjoint bins of ``n``
consecutive spokes (no spoke sharing).
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from tddip.diffcore import NumericalAbort
from tddip.forward import CoilMaps, SpokeStream, SystemOperator, SystemWindow, radial_coords
from tddip.phantom import FrameSeries
from tddip.recon.common import ReconResult, check_inputs
from tddip.recon.tv import tv1d_prox_complex, tv1d_value


@dataclass
class CsConfig:
    lam: float = 2000.0
    iterations: int = 150
    p: int = 1
    accelerated: bool = True
    power_iterations: int = 20
    lipschitz_safety: float = 1.05
    divergence_patience: int = 50
    seed: int = 0
    method: str = "gridded"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        if self.iterations <= 0:
            raise ValueError("iterations must be positive")
        if self.p != 1:
            raise ValueError("only p = 1 is supported")

    def to_dict(self) -> dict:
        return asdict(self)


def bins(K: int, n: int) -> list[list[int]]:
    """Disjoint consecutive bins of ``n`` spokes; the last bin takes the remainder."""
    if n < 1:
        raise ValueError("bin size must be positive")
    out = [list(range(s, min(s + n, K))) for s in range(0, K, n)]
    if len(out) > 1 and len(out[-1]) < n:
        out[-2].extend(out.pop())
    return out


class BinnedSystem:
    """Block-diagonal operator over the CS frames."""

    def __init__(self, stream: SpokeStream, coils: CoilMaps, n: int, method: str = "gridded"):
        self.bins = bins(stream.K, n)
        angles = stream.angles()
        cfg = stream.trajectory
        self.ops = []
        self.data = []
        for members in self.bins:
            win = SystemWindow(members[len(members) // 2], members,
                               [radial_coords(angles[m], cfg) for m in members])
            self.ops.append(SystemOperator(win, coils, method))
            self.data.append(stream.window_data(members))
        self.n_image = cfg.n_image

    @property
    def frames(self) -> int:
        return len(self.bins)

    def times(self) -> np.ndarray:
        return np.array([(b[0] + b[-1]) / 2.0 for b in self.bins])

    def residual(self, X):
        return [op.apply(x) - y for op, x, y in zip(self.ops, X, self.data)]

    def fidelity(self, X) -> float:
        return float(sum(np.sum(np.abs(r) ** 2) for r in self.residual(X)))

    def gradient(self, X) -> np.ndarray:
        return 2.0 * np.stack([op.adjoint(r) for op, r in zip(self.ops, self.residual(X))])

    def normal(self, X) -> np.ndarray:
        return np.stack([op.adjoint(op.apply(x)) for op, x in zip(self.ops, X)])

    def max_eig(self, iterations: int, seed: int) -> float:
        rng = np.random.default_rng(seed)
        shape = (self.frames, self.n_image, self.n_image)
        v = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(iterations):
            w = self.normal(v)
            lam = float(np.real(np.vdot(v, w)))
            v = w / np.linalg.norm(w)
        return lam


def cs_reconstruct(stream: SpokeStream, coils: CoilMaps, n: int, cfg: CsConfig = CsConfig()) -> ReconResult:
    check_inputs(stream, coils, n)
    t0 = time.perf_counter()
    sysop = BinnedSystem(stream, coils, n, cfg.method)
    L = 2.0 * sysop.max_eig(cfg.power_iterations, cfg.seed) * cfg.lipschitz_safety
    step = 1.0 / L
    shape = (sysop.frames, sysop.n_image, sysop.n_image)
    X = np.zeros(shape, dtype=np.complex128)
    Yx = X.copy()
    tk = 1.0
    fid_trace, obj_trace = [], []
    rising = 0
    for it in range(cfg.iterations):
        Xn = Yx - step * sysop.gradient(Yx)
        if sysop.frames > 1:
            Xn = tv1d_prox_complex(Xn, cfg.lam * step, axis=0)
        if cfg.accelerated:
            tn = (1.0 + np.sqrt(1.0 + 4.0 * tk * tk)) / 2.0
            Yx = Xn + ((tk - 1.0) / tn) * (Xn - X)
            tk = tn
        else:
            Yx = Xn
        X = Xn
        fid = sysop.fidelity(X)
        obj = fid + cfg.lam * tv1d_value(X, axis=0)
        if not np.isfinite(obj):
            raise NumericalAbort("CS objective became non-finite", iteration=it + 1)
        rising = rising + 1 if obj_trace and obj > obj_trace[-1] else 0
        # FISTA ripples are harmless; only a sustained climb above the start is divergence
        if rising >= cfg.divergence_patience and obj > obj_trace[0]:
            raise NumericalAbort(f"CS objective increased for {rising} consecutive iterations",
                                 iteration=it + 1)
        fid_trace.append(fid)
        obj_trace.append(obj)
    series = FrameSeries(X, times=sysop.times())
    conf = {"engine": "cs", "n": n, **cfg.to_dict()}
    return ReconResult(series, np.array(fid_trace), conf, time.perf_counter() - t0,
                       {"power_iteration": cfg.seed},
                       {"objective": np.array(obj_trace), "lipschitz": L, "bins": sysop.bins})


def expand_bins(series: FrameSeries, bin_members: list[list[int]]) -> FrameSeries:
    """Spread binned frames onto the per-spoke time grid (each spoke takes its bin's frame)."""
    idx = [f for f, members in enumerate(bin_members) for _ in members]
    return FrameSeries(series.frames[idx], series.dt)
