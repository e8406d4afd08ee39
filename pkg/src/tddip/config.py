"""Run configuration: INI-style file, named presets, command-line overrides.

Resolution order (later wins): built-in defaults, preset, config file, the
two environment variables ``TDDIP_OUTDIR`` (output directory) and
``TDDIP_THREADS`` (thread count), then ``--set section.key=value`` flags and
dedicated flags.  No other environment variables are consulted.
"""

from __future__ import annotations

import configparser
import io as _io
import math
import os
from pathlib import Path

from tddip.forward import TrajectoryConfig
from tddip.generator import GeneratorConfig
from tddip.phantom import PhantomConfig
from tddip.recon.cs import CsConfig
from tddip.recon.dip import DipConfig

ENV_OUTDIR = "TDDIP_OUTDIR"
ENV_THREADS = "TDDIP_THREADS"
RESOLVED_NAME = "config.resolved.ini"


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending keys."""


def _optional_int(s: str):
    return None if s.strip().lower() in ("none", "") else int(s)


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _sizes(s: str) -> list[int]:
    return [int(v) for v in s.replace(",", " ").split()]


# section -> key -> (parser, default as text)
SCHEMA: dict[str, dict[str, tuple]] = {
    "run": {
        "seed": (int, "0"),
        "outdir": (str, "out"),
        "threads": (int, "1"),
        "reference": (_bool, "true"),
    },
    "phantom": {
        "n_image": (int, "64"),
        "frames": (int, "20"),
        "coils": (int, "4"),
        "noise": (float, "0.05"),
        "depth": (float, "0.45"),
        "beats": (float, "2.0"),
        "jitter": (float, "0.2"),
        "mode": (str, "continuous"),
        "phases": (_optional_int, "none"),
        "spokes_per_phase": (int, "13"),
    },
    "trajectory": {
        "theta0_deg": (float, "0.0"),
        "dtheta_deg": (float, "111.25"),
        "dt": (float, "1.0"),
    },
    "generator": {
        "latent_hw": (int, "8"),
        "latent_ch": (int, "1"),
        "stages": (int, "3"),
        "channels": (int, "32"),
        "bn_eps": (float, "1e-5"),
    },
    "latents": {
        "segments": (int, "2"),
        "lo": (float, "0.0"),
        "hi": (float, "10.0"),
        "mode": (str, "interpolated"),
    },
    "engine": {
        "method": (str, "dip"),
        "n": (int, "5"),
        "iterations": (int, "2000"),
        "lr": (float, "0.01"),
        "lr_step": (_optional_int, "none"),
        "lr_factor": (float, "0.5"),
        "batch": (int, "1"),
        "nufft": (str, "gridded"),
        "cs_lambda": (float, "2000.0"),
        "cs_iterations": (int, "150"),
    },
    "metrics": {
        "column": (_optional_int, "none"),
        "sizes": (_sizes, "1 2 4 8 16 64"),
    },
}

# full-size presets run the long 128x128 protocols; desk variants keep their
# structure on a 64x64 grid with a 32-channel, 3-stage generator.  Latent
# segments scale with spokes per segment, so 20 desk frames get 2 segments.
PRESETS: dict[str, dict[str, str]] = {
    "retro": {
        "phantom.n_image": "128", "phantom.mode": "retrospective", "phantom.phases": "23",
        "phantom.spokes_per_phase": "13",
        "generator.latent_hw": "8", "generator.stages": "4", "generator.channels": "128",
        "latents.segments": "1", "latents.lo": "0.0", "latents.hi": "0.1",
        "engine.n": "13", "engine.iterations": "10000", "engine.lr": "0.001",
        "engine.lr_step": "2000", "engine.lr_factor": "0.5",
    },
    "dynamic": {
        "phantom.n_image": "128", "phantom.mode": "continuous",
        "generator.latent_hw": "8", "generator.stages": "4", "generator.channels": "128",
        "latents.segments": "14", "latents.lo": "0.0", "latents.hi": "10.0",
        "engine.n": "5", "engine.iterations": "20000", "engine.lr": "0.001", "engine.lr_step": "none",
    },
    "retro-desk": {
        "phantom.n_image": "64", "phantom.mode": "retrospective", "phantom.phases": "20",
        "phantom.spokes_per_phase": "13",
        "generator.latent_hw": "8", "generator.stages": "3", "generator.channels": "32",
        "latents.segments": "1", "latents.lo": "0.0", "latents.hi": "0.1",
        "engine.n": "13", "engine.iterations": "2000", "engine.lr": "0.01",
        "engine.lr_step": "400", "engine.lr_factor": "0.5",
    },
    "dynamic-desk": {
        "phantom.n_image": "64", "phantom.mode": "continuous",
        "generator.latent_hw": "8", "generator.stages": "3", "generator.channels": "32",
        "latents.segments": "2", "latents.lo": "0.0", "latents.hi": "10.0",
        "engine.n": "5", "engine.iterations": "2000", "engine.lr": "0.01", "engine.lr_step": "none",
    },
}


class RunConfig:
    """Resolved key/value configuration with typed accessors."""

    def __init__(self, raw: dict[str, dict[str, str]] | None = None):
        self.raw = {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}
        for sec, kv in (raw or {}).items():
            for k, v in kv.items():
                self.set(f"{sec}.{k}", v)

    # -- construction -------------------------------------------------

    @classmethod
    def resolve(cls, preset: str | None = None, path=None, overrides: dict[str, str] | None = None,
                env: dict[str, str] | None = None) -> "RunConfig":
        env = os.environ if env is None else env
        cfg = cls()
        if preset:
            if preset not in PRESETS:
                raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
            cfg.update(PRESETS[preset])
        if path is not None:
            cfg.update(read_ini(path))
        if env.get(ENV_OUTDIR):
            cfg.set("run.outdir", env[ENV_OUTDIR])
        if env.get(ENV_THREADS):
            cfg.set("run.threads", env[ENV_THREADS])
        cfg.update(overrides or {})
        cfg.validate()
        return cfg

    def set(self, dotted: str, value) -> None:
        sec, _, key = dotted.partition(".")
        if sec not in SCHEMA or key not in SCHEMA[sec]:
            raise ConfigError(f"unknown configuration key: {dotted}")
        self.raw[sec][key] = str(value)

    def update(self, flat: dict[str, str]) -> None:
        unknown = sorted(k for k in flat if k.partition(".")[0] not in SCHEMA
                         or k.partition(".")[2] not in SCHEMA[k.partition(".")[0]])
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        for k, v in flat.items():
            self.set(k, v)

    def get(self, dotted: str):
        sec, _, key = dotted.partition(".")
        parser = SCHEMA[sec][key][0]
        try:
            return parser(self.raw[sec][key])
        except ValueError as err:
            raise ConfigError(f"bad value for {dotted}: {self.raw[sec][key]!r} ({err})") from None

    def validate(self) -> None:
        bad = []
        for sec, keys in SCHEMA.items():
            for key in keys:
                try:
                    self.get(f"{sec}.{key}")
                except ConfigError as err:
                    bad.append(str(err))
        choices = {"phantom.mode": ("continuous", "retrospective"), "latents.mode": ("interpolated", "independent"),
                   "engine.method": ("dip", "cs", "bp", "ov"), "engine.nufft": ("gridded", "exact")}
        for k, allowed in choices.items():
            if self.raw[k.split(".")[0]][k.split(".")[1]] not in allowed:
                bad.append(f"{k} must be one of {', '.join(allowed)}")
        if not bad and self.get("run.threads") < 1:
            bad.append("run.threads must be at least 1")
        if bad:
            raise ConfigError("; ".join(bad))
        try:
            self.phantom(), self.trajectory(), self.dip(), self.cs()
        except ValueError as err:
            raise ConfigError(str(err)) from None

    # -- typed views --------------------------------------------------

    @property
    def seed(self) -> int:
        return self.get("run.seed")

    @property
    def threads(self) -> int:
        return 1 if self.get("run.reference") else self.get("run.threads")

    def phantom(self) -> PhantomConfig:
        return PhantomConfig(n_image=self.get("phantom.n_image"), K=self.get("phantom.frames"),
                             noise=self.get("phantom.noise"), depth=self.get("phantom.depth"),
                             beats=self.get("phantom.beats"), jitter=self.get("phantom.jitter"))

    def trajectory(self) -> TrajectoryConfig:
        return TrajectoryConfig(self.get("phantom.n_image"), math.radians(self.get("trajectory.theta0_deg")),
                                math.radians(self.get("trajectory.dtheta_deg")), self.get("trajectory.dt"))

    def generator(self) -> GeneratorConfig:
        return GeneratorConfig(latent_hw=self.get("generator.latent_hw"), latent_ch=self.get("generator.latent_ch"),
                               stages=self.get("generator.stages"), channels=self.get("generator.channels"),
                               bn_eps=self.get("generator.bn_eps"))

    def dip(self) -> DipConfig:
        return DipConfig(iterations=self.get("engine.iterations"), lr=self.get("engine.lr"),
                         lr_step=self.get("engine.lr_step"), lr_factor=self.get("engine.lr_factor"),
                         batch=self.get("engine.batch"), n=self.get("engine.n"), seed=self.seed,
                         generator=self.generator(), segments=self.get("latents.segments"),
                         latent_lo=self.get("latents.lo"), latent_hi=self.get("latents.hi"),
                         latent_mode=self.get("latents.mode"), method=self.get("engine.nufft"),
                         threads=self.threads)

    def cs(self) -> CsConfig:
        return CsConfig(lam=self.get("engine.cs_lambda"), iterations=self.get("engine.cs_iterations"),
                        seed=self.seed, method=self.get("engine.nufft"))

    # -- output -------------------------------------------------------

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        for sec, kv in self.raw.items():
            cp[sec] = dict(kv)
        buf = _io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def write_resolved(self, outdir) -> Path:
        path = Path(outdir) / RESOLVED_NAME
        path.write_text(self.to_ini())
        return path


def read_ini(path) -> dict[str, str]:
    cp = configparser.ConfigParser()
    try:
        with open(path) as f:
            cp.read_file(f)
    except configparser.Error as err:
        raise ConfigError(f"{path}: {err}") from None
    return {f"{sec}.{k}": v for sec in cp.sections() for k, v in cp[sec].items()}
