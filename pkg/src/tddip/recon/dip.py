"""Time-dependent deep image prior: fit one generator to all spokes.

Each frame ``k`` gets the latent ``z_k`` from a piecewise-linear schedule;
the generator output is weighted by every coil map, sampled on the frame's
shared spoke window, and compared with the measured spokes.  The generator
weights are the only trained quantities.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from tddip import diffcore as dc
from tddip.forward import CoilMaps, SpokeStream
from tddip.generator import GeneratorConfig, GeneratorParams, generate, init_generator, param_leaves, render
from tddip.latents import LatentSchedule, latent_at, sample_anchors, scenario_latents
from tddip.phantom import FrameSeries
from tddip.recon.common import ReconResult, check_inputs, frame_operators

LATENT_MODES = ("interpolated", "independent")


@dataclass
class DipConfig:
    iterations: int = 10_000
    lr: float = 1e-3
    lr_step: int | None = 2000
    lr_factor: float = 0.5
    batch: int = 1
    n: int = 13
    seed: int = 0
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    segments: int = 1
    latent_lo: float = 0.0
    latent_hi: float = 0.1
    latent_mode: str = "interpolated"
    method: str = "gridded"
    threads: int = 1

    def __post_init__(self):
        if self.iterations <= 0:
            raise ValueError("iterations must be positive")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.batch < 1:
            raise ValueError("batch must be at least 1")
        if self.n < 1 or self.n % 2 == 0:
            raise ValueError(f"window size n must be odd, got {self.n}")
        if self.latent_mode not in LATENT_MODES:
            raise ValueError(f"latent_mode must be one of {LATENT_MODES}")
        if self.segments < 1:
            raise ValueError("need at least one latent segment")

    def lr_at(self, it: int) -> float:
        """Learning rate for 0-based iteration ``it``."""
        if not self.lr_step:
            return self.lr
        return self.lr * self.lr_factor ** (it // self.lr_step)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["generator"] = self.generator.to_dict()
        return d

    @classmethod
    def retro(cls, **kw) -> "DipConfig":
        return cls(**{**dict(iterations=10_000, lr=1e-3, lr_step=2000, n=13, latent_hi=0.1, segments=1), **kw})

    @classmethod
    def dynamic(cls, **kw) -> "DipConfig":
        return cls(**{**dict(iterations=20_000, lr=1e-3, lr_step=None, n=5, latent_hi=10.0, segments=14), **kw})

    @classmethod
    def desk(cls, **kw) -> "DipConfig":
        """64x64 output, 32 filters, 3 stages, n=5, 2000 iterations at a constant rate."""
        base = dict(iterations=2000, lr=1e-2, lr_step=None, n=5, latent_hi=10.0, segments=2,
                    generator=GeneratorConfig(latent_hw=8, stages=3, channels=32))
        return cls(**{**base, **kw})


@dataclass
class DipModel:
    """Trained generator plus the latents it was fitted with."""

    params: GeneratorParams
    schedule: LatentSchedule
    latents: np.ndarray  # (K, ch, h, w) latents seen during training
    config: DipConfig

    def latent(self, t: float) -> np.ndarray:
        if self.config.latent_mode == "independent":
            if float(t) != int(t):
                raise ValueError("independent-per-frame latents exist only at integer times")
            return self.latents[int(t)]
        return latent_at(t, self.schedule)


def build_latents(cfg: DipConfig, K: int) -> tuple[LatentSchedule, np.ndarray]:
    shape = cfg.generator.latent_shape()
    anchors = sample_anchors(cfg.segments + 1, shape, cfg.latent_lo, cfg.latent_hi, cfg.seed + 1)
    schedule = LatentSchedule(anchors, K)
    if cfg.latent_mode == "independent":
        latents = scenario_latents("independent-per-frame", schedule, seed=cfg.seed + 2)
    else:
        latents = np.stack([latent_at(float(k), schedule) for k in range(K)])
    return schedule, latents


def frame_loss(params: GeneratorParams, z: np.ndarray, op, data: np.ndarray, coils: CoilMaps):
    """Data-fidelity loss of one frame and its parameter gradients."""
    tape = dc.Tape()
    leaves = param_leaves(tape, params)
    out = generate(tape, params, z, leaves)
    terms = []
    for c in range(coils.count):
        xc = dc.record_complex_pixmul(tape, out, coils.maps[c])
        yc = dc.record_nudft_layer(tape, xc, op.op)
        terms.append(dc.record_l2_loss(tape, yc, data[c]))
    loss = dc.record_add(tape, *terms) if len(terms) > 1 else terms[0]
    return float(tape.value(loss)), dc.backward(tape, loss)


def dip_train(stream: SpokeStream, coils: CoilMaps, cfg: DipConfig, progress=None) -> tuple[DipModel, np.ndarray]:
    """Fit the generator; returns the model and the per-iteration loss trace."""
    check_inputs(stream, coils, cfg.n)
    if cfg.generator.output_hw != stream.trajectory.n_image:
        raise ValueError(f"generator emits {cfg.generator.output_hw}px images, "
                         f"grid is {stream.trajectory.n_image}px")
    K = stream.K
    ops = frame_operators(stream, coils, cfg.n, cfg.method)
    schedule, latents = build_latents(cfg, K)
    params = init_generator(cfg.generator, cfg.seed)
    state = dc.AdamState.zeros_like(params.tensors)
    rng = np.random.default_rng(cfg.seed + 3)
    order: list[int] = []
    trace = np.zeros(cfg.iterations)
    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 and cfg.batch > 1 else None

    def one(k):
        op, data = ops[k]
        return frame_loss(params, latents[k], op, data, coils)

    try:
        for it in range(cfg.iterations):
            ks = []
            while len(ks) < min(cfg.batch, K):
                if not order:
                    order = list(rng.permutation(K))
                ks.append(order.pop())
            results = list(pool.map(one, ks)) if pool else [one(k) for k in ks]
            loss = sum(r[0] for r in results)
            if not np.isfinite(loss):
                raise dc.NumericalAbort(f"non-finite loss at iteration {it + 1}", iteration=it + 1)
            grads = dict(results[0][1])
            for _, g in results[1:]:  # fixed frame order keeps the reduction deterministic
                for name in grads:
                    grads[name] = grads[name] + g[name]
            try:
                params.tensors, state = dc.adam_step(params.tensors, grads, state, cfg.lr_at(it))
            except dc.NumericalAbort as err:
                err.iteration = it + 1
                raise
            trace[it] = loss
            if progress is not None:
                progress(it, loss)
    finally:
        if pool:
            pool.shutdown()
    return DipModel(params, schedule, latents, cfg), trace


def dip_infer(model: DipModel | GeneratorParams, schedule: LatentSchedule | None = None,
              times=None) -> FrameSeries:
    """Frames ``g(z_t)`` at the requested (possibly fractional) times."""
    if isinstance(model, DipModel):
        params, latent = model.params, model.latent
        K = model.schedule.K
    else:
        params, latent = model, lambda t: latent_at(t, schedule)
        K = schedule.K
    if times is None:
        times = np.arange(K, dtype=float)
    times = np.asarray(times, dtype=float)
    return FrameSeries(np.stack([render(params, latent(t)) for t in times]), times=times)


def render_latents(params: GeneratorParams, latents, times=None) -> FrameSeries:
    return FrameSeries(np.stack([render(params, z) for z in latents]), times=times)


def dip_reconstruct(stream: SpokeStream, coils: CoilMaps, cfg: DipConfig,
                    progress=None) -> tuple[ReconResult, DipModel]:
    t0 = time.perf_counter()
    model, trace = dip_train(stream, coils, cfg, progress)
    series = dip_infer(model)
    result = ReconResult(series, trace, {"engine": "dip", **cfg.to_dict()}, time.perf_counter() - t0,
                         {"generator": cfg.seed, "anchors": cfg.seed + 1, "latents": cfg.seed + 2,
                          "shuffle": cfg.seed + 3})
    return result, model


def with_latent_size(cfg: DipConfig, size: int, n_image: int) -> DipConfig:
    """Same protocol with a different latent side length (stage count adapts)."""
    g = cfg.generator
    gen = GeneratorConfig.for_output(n_image, size, latent_ch=g.latent_ch, channels=g.channels,
                                     bn_eps=g.bn_eps)
    return replace(cfg, generator=gen)
