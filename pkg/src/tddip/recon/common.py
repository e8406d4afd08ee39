from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from tddip.forward import CoilMaps, SpokeStream, SystemOperator, make_window
from tddip.phantom import FrameSeries


@dataclass
class ReconResult:
    series: FrameSeries
    loss_trace: np.ndarray
    config: dict
    wall_clock: float = 0.0
    seeds: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.loss_trace = np.asarray(self.loss_trace, dtype=np.float64)
        if not np.all(np.isfinite(self.loss_trace)):
            raise ValueError("loss trace contains non-finite values")


def check_inputs(stream: SpokeStream, coils: CoilMaps, n: int | None = None):
    if coils.count != stream.coils:
        raise ValueError(f"stream has {stream.coils} coils, maps have {coils.count}")
    if coils.maps.shape[-1] != stream.trajectory.n_image:
        raise ValueError("coil maps do not match the reconstruction grid")
    if n is not None and stream.K < n:
        raise ValueError(f"stream has {stream.K} spokes, fewer than the window size {n}")


def frame_operators(stream: SpokeStream, coils: CoilMaps, n: int, method: str = "gridded"):
    """Per-frame (operator, data) pairs using the shared n-spoke windows."""
    ops = []
    for k in range(stream.K):
        win = make_window(stream, k, n)
        ops.append((SystemOperator(win, coils, method), stream.window_data(win.members)))
    return ops
