"""Domain objects to and from containers (streams, series, coils, checkpoints, results)."""

from __future__ import annotations

import json
import math

import numpy as np

from tddip.forward import CoilMaps, Spoke, SpokeStream, TrajectoryConfig
from tddip.generator import GeneratorConfig, GeneratorParams, layer_shapes
from tddip.io import ContainerError, read_container, write_container
from tddip.latents import LatentAnchors, LatentSchedule
from tddip.phantom import FrameSeries, PhantomConfig
from tddip.recon.common import ReconResult
from tddip.recon.dip import DipConfig, DipModel


def _kind(meta: dict, expected: str, path) -> None:
    if meta.get("kind") != expected:
        raise ContainerError(f"{path}: holds {meta.get('kind', 'unknown')!r} data, expected {expected!r}")


def _need(tensors: dict, names, path) -> None:
    missing = [n for n in names if n not in tensors]
    if missing:
        raise ContainerError(f"{path}: missing tensor(s) {', '.join(missing)}")


def save_series(path, series: FrameSeries, meta: dict | None = None) -> None:
    write_container(path, {"frames": series.frames, "times": series.times},
                    {"kind": "series", "dt": repr(series.dt), **(meta or {})})


def load_series(path) -> tuple[FrameSeries, dict]:
    t, meta = read_container(path)
    if meta.get("kind") not in ("series", "result"):
        raise ContainerError(f"{path}: holds {meta.get('kind', 'unknown')!r} data, expected a frame series")
    _need(t, ("frames", "times"), path)
    return FrameSeries(t["frames"], float(meta.get("dt", 1.0)), t["times"]), meta


def save_coils(path, coils: CoilMaps, seed: int | None = None) -> None:
    write_container(path, {"maps": coils.maps}, {"kind": "coils", "seed": seed})


def load_coils(path) -> CoilMaps:
    t, meta = read_container(path)
    _kind(meta, "coils", path)
    _need(t, ("maps",), path)
    return CoilMaps(t["maps"])


def save_stream(path, stream: SpokeStream, meta: dict | None = None) -> None:
    tr = stream.trajectory
    write_container(path, {"samples": stream.samples(), "angles": stream.angles()},
                    {"kind": "stream", "n_image": tr.n_image, "theta0": repr(tr.theta0),
                     "dtheta": repr(tr.dtheta), "dt": repr(tr.dt), "coils": stream.coils, **(meta or {})})


def load_stream(path) -> tuple[SpokeStream, dict]:
    t, meta = read_container(path)
    _kind(meta, "stream", path)
    _need(t, ("samples", "angles"), path)
    traj = TrajectoryConfig(int(meta["n_image"]), float(meta["theta0"]), float(meta["dtheta"]), float(meta["dt"]))
    samples = t["samples"]
    if samples.ndim != 3:
        raise ContainerError(f"{path}: samples must be (K, coils, m), got {samples.shape}")
    spokes = [Spoke(k, float(a), samples[k]) for k, a in enumerate(t["angles"])]
    return SpokeStream(traj, spokes, samples.shape[1]), meta


def save_checkpoint(path, model: DipModel, meta: dict | None = None) -> None:
    a = model.schedule.anchors
    tensors = dict(model.params.tensors)
    tensors["latents.anchors"] = a.anchors
    tensors["latents.train"] = model.latents
    info = {"kind": "checkpoint", "K": model.schedule.K, "anchor_lo": repr(a.lo), "anchor_hi": repr(a.hi),
            "anchor_seed": a.seed, "dip_config": json.dumps(model.config.to_dict(), sort_keys=True)}
    write_container(path, tensors, {**info, **(meta or {})})


def dip_config_from_dict(d: dict) -> DipConfig:
    d = dict(d)
    d["generator"] = GeneratorConfig(**d["generator"])
    return DipConfig(**d)


def load_checkpoint(path) -> DipModel:
    t, meta = read_container(path)
    _kind(meta, "checkpoint", path)
    _need(t, ("latents.anchors", "latents.train"), path)
    cfg = dip_config_from_dict(json.loads(meta["dip_config"]))
    params = {k: v for k, v in t.items() if not k.startswith("latents.")}
    shapes = layer_shapes(cfg.generator)
    if set(shapes) != set(params) or any(params[k].shape != s for k, s in shapes.items()):
        raise ContainerError(f"{path}: parameter tensors do not match the stored generator config")
    anchors = LatentAnchors(t["latents.anchors"], float(meta["anchor_lo"]), float(meta["anchor_hi"]),
                            int(meta["anchor_seed"]))
    schedule = LatentSchedule(anchors, int(meta["K"]))
    return DipModel(GeneratorParams(cfg.generator, {k: params[k] for k in shapes}), schedule,
                    t["latents.train"], cfg)


def save_result(path, result: ReconResult, extra: dict | None = None, meta: dict | None = None) -> None:
    """Frames, times and loss trace plus provenance (config and seeds as JSON).

    Timing is deliberately left out so reference-mode outputs are bit-identical.
    """
    tensors = {"frames": result.series.frames, "times": result.series.times, "loss": result.loss_trace}
    tensors.update(extra or {})
    info = {"kind": "result", "dt": repr(result.series.dt),
            "config": json.dumps(result.config, sort_keys=True, default=_json_default),
            "seeds": json.dumps(result.seeds, sort_keys=True)}
    write_container(path, tensors, {**info, **(meta or {})})


def load_result(path) -> tuple[FrameSeries, dict, dict]:
    t, meta = read_container(path)
    _kind(meta, "result", path)
    _need(t, ("frames", "times"), path)
    return FrameSeries(t["frames"], float(meta.get("dt", 1.0)), t["times"]), t, meta


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, float) and math.isnan(o):
        return None
    raise TypeError(f"cannot serialize {type(o).__name__}")


def phantom_from_json(text: str) -> PhantomConfig:
    d = json.loads(text)
    d["heart_center"] = tuple(d["heart_center"])
    d["ellipses"] = tuple(tuple(e) for e in d["ellipses"])
    return PhantomConfig(**d)
