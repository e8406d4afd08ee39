"""Density-compensated backprojection (BP) and all-spoke overlap (OV)."""

from __future__ import annotations

import time

import numpy as np

from tddip.forward import (CoilMaps, SpokeStream, SystemOperator, SystemWindow, density_weights,
                           make_window, radial_coords)
from tddip.phantom import FrameSeries
from tddip.recon.common import ReconResult, check_inputs


def coil_combine(per_coil: np.ndarray, coils: CoilMaps) -> np.ndarray:
    """Conjugate-map weighted sum normalized by the squared root-sum-of-squares."""
    norm = np.sum(np.abs(coils.maps) ** 2, axis=0)
    comb = np.sum(np.conj(coils.maps) * per_coil, axis=0)
    return np.where(norm > 0, comb / np.where(norm > 0, norm, 1.0), 0.0)


def backproject(stream: SpokeStream, coils: CoilMaps, window: SystemWindow,
                method: str = "gridded") -> np.ndarray:
    cfg = stream.trajectory
    op = SystemOperator(window, coils, method)
    w = np.tile(density_weights(cfg), len(window.members))
    y = stream.window_data(window.members) * w
    # d^2k / (2 pi)^2 for spacing pi/N along the readout and pi/n across spokes
    scale = 1.0 / (4.0 * cfg.n_image * len(window.members))
    per_coil = op.op.adjoint(y) * scale
    return coil_combine(per_coil, coils)


def bp_reconstruct(stream: SpokeStream, coils: CoilMaps, n: int, method: str = "gridded") -> ReconResult:
    check_inputs(stream, coils, n)
    t0 = time.perf_counter()
    frames = [backproject(stream, coils, make_window(stream, k, n), method) for k in range(stream.K)]
    series = FrameSeries(np.stack(frames))
    return ReconResult(series, np.zeros(0), {"engine": "bp", "n": n, "method": method},
                       time.perf_counter() - t0)


def ov_reconstruct(stream: SpokeStream, coils: CoilMaps, method: str = "gridded") -> ReconResult:
    """Static reference from every spoke of the stream at once."""
    check_inputs(stream, coils)
    t0 = time.perf_counter()
    K = stream.K
    angles = stream.angles()
    win = SystemWindow(K // 2, list(range(K)), [radial_coords(a, stream.trajectory) for a in angles])
    frame = backproject(stream, coils, win, method)
    series = FrameSeries(frame[None], times=np.array([(K - 1) / 2.0]))
    return ReconResult(series, np.zeros(0), {"engine": "ov", "method": method}, time.perf_counter() - t0)
