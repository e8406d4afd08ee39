import numpy as np
import pytest

from tddip import diffcore as dc
from tddip.generator import GeneratorConfig, generate, init_generator, layer_shapes, render


def test_default_shapes_and_count():
    cfg = GeneratorConfig()
    assert cfg.output_hw == 128
    shapes = layer_shapes(cfg)
    assert shapes["conv0.weight"] == (128, 1, 3, 3)
    assert shapes["conv10.weight"] == (2, 128, 3, 3)
    assert "bn10.gamma" not in shapes
    # oracle: count by hand, 10 conv+bn blocks and a final conv
    first = 128 * 9 + 128 + 2 * 128
    mid = 128 * 128 * 9 + 128 + 2 * 128
    last = 2 * 128 * 9 + 2
    assert init_generator(cfg, 0).n_parameters() == first + 9 * mid + last


def test_desk_forward_shape(rng):
    cfg = GeneratorConfig(latent_hw=8, stages=3, channels=32)
    params = init_generator(cfg, 0)
    tape = dc.Tape()
    out = generate(tape, params, rng.uniform(0, 0.1, (1, 8, 8)))
    assert tape.value(out).shape == (2, 64, 64)
    assert render(params, rng.uniform(0, 0.1, (1, 8, 8))).shape == (64, 64)


def test_wrong_latent_shape():
    params = init_generator(GeneratorConfig(latent_hw=4, stages=1, channels=4), 0)
    with pytest.raises(dc.ShapeError):
        render(params, np.zeros((1, 8, 8)))


def test_init_is_seeded():
    cfg = GeneratorConfig(latent_hw=4, stages=1, channels=4)
    a, b, c = init_generator(cfg, 3), init_generator(cfg, 3), init_generator(cfg, 4)
    for k in a.tensors:
        np.testing.assert_array_equal(a.tensors[k], b.tensors[k])
    assert not np.array_equal(a.tensors["conv0.weight"], c.tensors["conv0.weight"])


def test_he_init_scale():
    params = init_generator(GeneratorConfig(channels=64, stages=1), 0)
    w = params.tensors["conv3.weight"]
    assert abs(w.std() - np.sqrt(2 / (64 * 9))) < 0.02 * np.sqrt(2 / (64 * 9))


def test_for_output():
    assert GeneratorConfig.for_output(64, 1).stages == 6
    assert GeneratorConfig.for_output(64, 64).stages == 0
    with pytest.raises(ValueError):
        GeneratorConfig.for_output(64, 3)


def test_unit_latent_gives_constant_image(rng):
    # per-channel normalization of a single pixel leaves only the BN offset
    params = init_generator(GeneratorConfig.for_output(16, 1, channels=4), 0)
    for name, v in params.tensors.items():
        if name.endswith(".beta"):
            params.tensors[name] = rng.standard_normal(v.shape)
    a = render(params, np.full((1, 1, 1), 0.02))
    b = render(params, np.full((1, 1, 1), 0.09))
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_generator_gradcheck():
    rng = np.random.default_rng(7)
    cfg = GeneratorConfig(latent_hw=2, stages=1, channels=3)
    params = init_generator(cfg, 1)
    names = list(params.tensors)
    z = rng.uniform(0, 1, (1, 2, 2))
    target = rng.standard_normal((2, 4, 4))

    def build(tape, ids):
        out = generate(tape, params, ids[0], leaves=dict(zip(names, ids[1:])))
        return dc.record_l2_loss(tape, out, target)

    errs = dc.gradcheck(build, [z] + [params.tensors[n] for n in names])
    assert max(errs) < 1e-4
