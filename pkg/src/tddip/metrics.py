"""Image-quality metrics and the latent-size sweep harness."""

from __future__ import annotations

import csv
import io as _io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from tddip.phantom import FrameSeries

RSNR_CAP_DB = 300.0


@dataclass
class Rsnr:
    db: float
    a: float
    b: float
    degenerate: bool = False


def rsnr(ref, est) -> Rsnr:
    """Regressed SNR on magnitudes: best affine fit ``|ref| ~ a*|est| + b``."""
    r = np.abs(np.asarray(ref)).ravel().astype(np.float64)
    e = np.abs(np.asarray(est)).ravel().astype(np.float64)
    if r.shape != e.shape:
        raise ValueError(f"shape mismatch {np.shape(ref)} vs {np.shape(est)}")
    rn = np.linalg.norm(r)
    ec = e - e.mean()
    degenerate = not np.any(ec)
    if degenerate:
        # a is unidentifiable; offset-only fit
        a = 0.0
    else:
        a = float(np.dot(ec, r - r.mean()) / np.dot(ec, ec))
    b = float(r.mean() - a * e.mean())
    res = np.linalg.norm(r - a * e - b)
    if rn == 0:
        return Rsnr(-np.inf if res > 0 else RSNR_CAP_DB, a, b, degenerate)
    if res <= 1e-12 * rn:
        return Rsnr(RSNR_CAP_DB, a, b, degenerate)
    return Rsnr(float(min(20.0 * np.log10(rn / res), RSNR_CAP_DB)), a, b, degenerate)


@dataclass
class MetricReport:
    per_frame: np.ndarray
    fits: list[tuple[float, float]]
    temporal_std_map: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_frame))

    def table(self) -> str:
        lines = [f"{'frame':>5}  {'rsnr_db':>9}  {'a':>10}  {'b':>10}"]
        for i, (v, (a, b)) in enumerate(zip(self.per_frame, self.fits)):
            lines.append(f"{i:>5}  {v:>9.3f}  {a:>10.4g}  {b:>10.4g}")
        lines.append(f"{'mean':>5}  {self.mean:>9.3f}")
        return "\n".join(lines)

    def delimited(self, sep: str = ",") -> str:
        buf = _io.StringIO()
        w = csv.writer(buf, delimiter=sep, lineterminator="\n")
        w.writerow(["frame", "rsnr_db", "a", "b"])
        for i, (v, (a, b)) in enumerate(zip(self.per_frame, self.fits)):
            w.writerow([i, f"{v:.6f}", f"{a:.6g}", f"{b:.6g}"])
        w.writerow(["mean", f"{self.mean:.6f}", "", ""])
        return buf.getvalue()


def evaluate_series(truth: FrameSeries, est: FrameSeries) -> MetricReport:
    if truth.frames.shape != est.frames.shape:
        raise ValueError(f"truth {truth.frames.shape} and estimate {est.frames.shape} differ in shape")
    scores = [rsnr(t, e) for t, e in zip(truth.frames, est.frames)]
    rep = MetricReport(np.array([s.db for s in scores]), [(s.a, s.b) for s in scores])
    if est.K >= 2:
        rep.temporal_std_map = temporal_std(est)[1]
    return rep


def mean_rsnr(truth: FrameSeries, est: FrameSeries) -> float:
    return evaluate_series(truth, est).mean


def cross_section(series: FrameSeries, column: int | None = None) -> np.ndarray:
    """(K, N) magnitudes of one image column over time; defaults to the center column."""
    n = series.n_image
    if column is None:
        column = n // 2
    if not 0 <= column < series.frames.shape[2]:
        raise ValueError(f"column {column} outside [0, {series.frames.shape[2] - 1}]")
    return np.abs(series.frames[:, :, column])


def temporal_std(series: FrameSeries) -> tuple[float, np.ndarray]:
    if series.K < 2:
        raise ValueError("temporal std needs at least two frames")
    m = np.std(np.abs(series.frames), axis=0)
    return float(m.mean()), m


def magnitude_deviation(ref: FrameSeries, other: FrameSeries) -> float:
    """Mean absolute magnitude difference relative to the mean reference magnitude."""
    a, b = np.abs(ref.frames), np.abs(other.frames)
    return float(np.mean(np.abs(a - b)) / np.mean(a))


@dataclass
class SweepRow:
    size: int
    rsnr_db: float
    temporal_std: float
    seconds: float


def sweep_table(rows: list[SweepRow]) -> str:
    head = "Latent size | " + " | ".join(f"{r.size}x{r.size}" for r in rows)
    vals = "RSNR (dB)   | " + " | ".join(f"{r.rsnr_db:.1f}" for r in rows)
    return head + "\n" + vals


def sweep_delimited(rows: list[SweepRow], sep: str = ",") -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, delimiter=sep, lineterminator="\n")
    w.writerow(["latent_size", "rsnr_db", "temporal_std", "seconds"])
    for r in rows:
        w.writerow([r.size, f"{r.rsnr_db:.6f}", f"{r.temporal_std:.6g}", f"{r.seconds:.2f}"])
    return buf.getvalue()


def sweep_latent_size(sizes, stream, coils, truth: FrameSeries, base_cfg,
                      on_result: Callable | None = None) -> list[SweepRow]:
    """Train and score one DIP run per latent side length under a shared protocol."""
    from tddip.recon.dip import dip_reconstruct, with_latent_size

    rows = []
    for s in sizes:
        cfg = with_latent_size(base_cfg, int(s), stream.trajectory.n_image)
        result, model = dip_reconstruct(stream, coils, cfg)
        row = SweepRow(int(s), mean_rsnr(truth, result.series), temporal_std(result.series)[0],
                       result.wall_clock)
        rows.append(row)
        if on_result is not None:
            on_result(row, result, model)
    return rows
