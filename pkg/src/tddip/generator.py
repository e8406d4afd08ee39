"""Convolutional generator mapping a small latent image to a complex image.

Layer sequence (defaults reproduce the full-size network: 8x8 latent,
4 upsampling stages, 128 filters, 128x128x2 output)::

    (Conv3x3 + BN + ReLU) x 2                      at latent size
    repeat `stages` times:
        NN upsample x2, (Conv3x3 + BN + ReLU) x 2
    Conv3x3 -> 2 channels                          no BN, no ReLU

Parameters are enumerated in that order as ``conv{i}.weight``,
``conv{i}.bias``, ``bn{i}.gamma``, ``bn{i}.beta`` with ``i`` counting
convolutions from 0; the last convolution has no ``bn`` entries.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from tddip import diffcore as dc


@dataclass(frozen=True)
class GeneratorConfig:
    latent_hw: int = 8
    latent_ch: int = 1
    stages: int = 4
    channels: int = 128
    out_channels: int = 2
    kernel: int = 3
    bn_eps: float = 1e-5

    def __post_init__(self):
        if self.out_channels != 2:
            raise ValueError("the generator always emits 2 (real, imaginary) channels")
        if self.kernel != 3:
            raise ValueError("only 3x3 kernels are supported")
        if self.latent_hw < 1 or self.stages < 0 or self.channels < 1 or self.latent_ch < 1:
            raise ValueError(f"invalid generator config {self}")

    @property
    def output_hw(self) -> int:
        return self.latent_hw * 2 ** self.stages

    @property
    def n_convs(self) -> int:
        return 2 + 2 * self.stages + 1

    def latent_shape(self) -> tuple[int, int, int]:
        return (self.latent_ch, self.latent_hw, self.latent_hw)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def for_output(cls, output_hw: int, latent_hw: int, **kw) -> "GeneratorConfig":
        """Config whose stage count maps ``latent_hw`` onto ``output_hw``."""
        stages = 0
        while latent_hw * 2 ** stages < output_hw:
            stages += 1
        if latent_hw * 2 ** stages != output_hw:
            raise ValueError(f"{output_hw} is not {latent_hw} times a power of two")
        return cls(latent_hw=latent_hw, stages=stages, **kw)


@dataclass
class GeneratorParams:
    config: GeneratorConfig
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def names(self) -> list[str]:
        return list(self.tensors)

    def copy(self) -> "GeneratorParams":
        return GeneratorParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.tensors.values()))


def layer_shapes(cfg: GeneratorConfig) -> dict[str, tuple[int, ...]]:
    shapes = {}
    k = cfg.kernel
    cin = cfg.latent_ch
    for i in range(cfg.n_convs):
        last = i == cfg.n_convs - 1
        cout = cfg.out_channels if last else cfg.channels
        shapes[f"conv{i}.weight"] = (cout, cin, k, k)
        shapes[f"conv{i}.bias"] = (cout,)
        if not last:
            shapes[f"bn{i}.gamma"] = (cout,)
            shapes[f"bn{i}.beta"] = (cout,)
        cin = cout
    return shapes


def init_generator(config: GeneratorConfig, seed: int) -> GeneratorParams:
    """He-normal weights (std sqrt(2/fan_in)), zero biases, unit BN scale."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in layer_shapes(config).items():
        if name.endswith(".weight"):
            fan_in = shape[1] * shape[2] * shape[3]
            tensors[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        elif name.endswith(".gamma"):
            tensors[name] = np.ones(shape)
        else:
            tensors[name] = np.zeros(shape)
    return GeneratorParams(config, tensors)


def param_leaves(tape: dc.Tape, params: GeneratorParams) -> dict[str, int]:
    return {name: tape.leaf(v, name=name, param=True) for name, v in params.tensors.items()}


def generate(tape: dc.Tape, params: GeneratorParams, z, leaves: dict[str, int] | None = None) -> int:
    """Record the generator on ``tape`` and return the (2, H, W) output node.

    ``z`` is a latent array or an existing node id.  Parameter leaves are
    created unless ``leaves`` already maps names to nodes.
    """
    cfg = params.config
    if not isinstance(z, (int, np.integer)):
        z = np.asarray(z, dtype=np.float64)
        if z.shape != cfg.latent_shape():
            raise dc.ShapeError(f"latent has shape {z.shape}, generator expects {cfg.latent_shape()}")
        z = tape.leaf(z, name="z")
    elif tape.value(z).shape != cfg.latent_shape():
        raise dc.ShapeError(f"latent node has shape {tape.value(z).shape}")
    if leaves is None:
        leaves = param_leaves(tape, params)

    def block(h, i):
        h = dc.record_conv2d(tape, h, leaves[f"conv{i}.weight"], leaves[f"conv{i}.bias"], pad=1)
        h = dc.record_batchnorm2d(tape, h, leaves[f"bn{i}.gamma"], leaves[f"bn{i}.beta"], cfg.bn_eps)
        return dc.record_relu(tape, h)

    h = block(block(z, 0), 1)
    i = 2
    for _ in range(cfg.stages):
        h = dc.record_upsample_nn2x(tape, h)
        h = block(block(h, i), i + 1)
        i += 2
    return dc.record_conv2d(tape, h, leaves[f"conv{i}.weight"], leaves[f"conv{i}.bias"], pad=1)


def render(params: GeneratorParams, z) -> np.ndarray:
    """Evaluate the generator and return the output as a complex image."""
    tape = dc.Tape()
    out = tape.value(generate(tape, params, z))
    return out[0] + 1j * out[1]
