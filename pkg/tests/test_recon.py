import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tddip import diffcore as dc
from tddip import forward as fw
from tddip import phantom as ph
from tddip.generator import GeneratorConfig
from tddip.metrics import rsnr
from tddip.recon import (CsConfig, DipConfig, bp_reconstruct, cs_reconstruct, dip_infer, dip_reconstruct,
                         dip_train, expand_bins, ov_reconstruct)
from tddip.recon.cs import BinnedSystem, bins
from tddip.recon.tv import tv1d_prox, tv1d_prox_complex, tv1d_value


def tv_certificate(y, x, lam, tol=1e-9):
    """Optimality of the 1D TV prox: y - x = D^T u with |u| <= lam, u = lam*sign(Dx) where Dx != 0."""
    r = y - x
    u = -np.cumsum(r)[:-1]
    dx = np.diff(x)
    assert abs(r.sum()) < tol * max(1, np.abs(y).sum())
    assert np.all(np.abs(u) <= lam * (1 + 1e-9) + tol)
    jump = np.abs(dx) > 1e-9
    np.testing.assert_allclose(u[jump], lam * np.sign(dx[jump]), atol=1e-7)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=40), st.floats(0, 5))
def test_tv_prox_certificate(vals, lam):
    y = np.array(vals)
    x = tv1d_prox(y, lam)
    if len(y) > 1:
        tv_certificate(y, x, lam)
    else:
        np.testing.assert_array_equal(x, y)


def test_tv_prox_limits(rng):
    y = rng.standard_normal(30)
    np.testing.assert_array_equal(tv1d_prox(y, 0.0), y)
    np.testing.assert_allclose(tv1d_prox(y, 1e6), np.full(30, y.mean()), atol=1e-9)


def test_tv_prox_complex_acts_on_parts(rng):
    x = rng.standard_normal((6, 3, 3)) + 1j * rng.standard_normal((6, 3, 3))
    out = tv1d_prox_complex(x, 0.4, axis=0)
    np.testing.assert_allclose(out[:, 1, 2].real, tv1d_prox(x[:, 1, 2].real, 0.4))
    np.testing.assert_allclose(out[:, 1, 2].imag, tv1d_prox(x[:, 1, 2].imag, 0.4))
    assert tv1d_value(np.ones((4, 2, 2)) * (1 + 1j)) == 0.0


def test_bins():
    assert bins(10, 5) == [[0, 1, 2, 3, 4], [5, 6, 7, 8, 9]]
    assert bins(12, 5) == [[0, 1, 2, 3, 4], [5, 6, 7, 8, 9, 10, 11]]
    assert bins(3, 1) == [[0], [1], [2]]
    assert bins(3, 5) == [[0, 1, 2]]


@pytest.fixture(scope="module")
def small():
    cfg = ph.PhantomConfig(n_image=16, K=10, noise=0.0)
    return ph.desk_scenario(cfg, C=2, seed=1)


def test_cs_lambda_zero_matches_least_squares():
    # oracle: dense least squares on each bin's explicit system matrix
    scen = ph.desk_scenario(ph.PhantomConfig(n_image=8, K=18), C=4, seed=1)
    res = cs_reconstruct(scen.stream, scen.coils, 9, CsConfig(lam=0.0, iterations=6000, method="exact"))
    sysop = BinnedSystem(scen.stream, scen.coils, 9, "exact")
    for f, op in enumerate(sysop.ops):
        M = np.stack([op.apply(e.reshape(8, 8)).ravel() for e in np.eye(64)], axis=1)
        x = np.linalg.lstsq(M, sysop.data[f].ravel(), rcond=None)[0]
        # radial spokes barely touch the k-space corners, so a few modes converge slowly
        np.testing.assert_allclose(res.series.frames[f].ravel(), x, atol=1e-3 * np.abs(x).max())
        r_cs = np.linalg.norm(M @ res.series.frames[f].ravel() - sysop.data[f].ravel())
        r_ls = np.linalg.norm(M @ x - sysop.data[f].ravel())
        assert r_cs <= r_ls * (1 + 1e-6)


def test_cs_objective_decreases_and_bins_expand(small):
    res = cs_reconstruct(small.stream, small.coils, 1, CsConfig(lam=1.0, iterations=60))
    obj = res.extras["objective"]
    assert obj[-1] < obj[0]
    assert res.series.K == 10
    binned = cs_reconstruct(small.stream, small.coils, 5, CsConfig(lam=1.0, iterations=20))
    full = expand_bins(binned.series, binned.extras["bins"])
    assert full.K == 10
    np.testing.assert_array_equal(full.frames[3], binned.series.frames[0])
    np.testing.assert_array_equal(full.frames[7], binned.series.frames[1])


def test_cs_is_deterministic(small):
    a = cs_reconstruct(small.stream, small.coils, 1, CsConfig(lam=1.0, iterations=10))
    b = cs_reconstruct(small.stream, small.coils, 1, CsConfig(lam=1.0, iterations=10))
    np.testing.assert_array_equal(a.series.frames, b.series.frames)


def test_cs_divergence_abort(small):
    with pytest.raises(dc.NumericalAbort):
        cs_reconstruct(small.stream, small.coils, 1,
                       CsConfig(lam=0.0, iterations=200, lipschitz_safety=0.2, divergence_patience=5))


def test_bp_recovers_static_object():
    # a static object seen through all spokes should come back close to itself
    cfg = ph.PhantomConfig(n_image=32, K=64, depth=0.0, jitter=0.0, noise=0.0)
    scen = ph.desk_scenario(cfg, C=1, seed=0)
    ov = ov_reconstruct(scen.stream, scen.coils)
    assert ov.series.K == 1
    assert rsnr(scen.truth.frames[0], ov.series.frames[0]).db > 12
    # unit scaling: the affine fit gain should be close to one
    assert 0.7 < rsnr(scen.truth.frames[0], ov.series.frames[0]).a < 1.4


def test_bp_frames(small):
    res = bp_reconstruct(small.stream, small.coils, 3)
    assert res.series.frames.shape == (10, 16, 16)


def test_mismatched_coils_rejected(small):
    with pytest.raises(ValueError):
        bp_reconstruct(small.stream, ph.make_coil_maps(3, 16), 3)


def tiny_cfg(**kw):
    base = dict(iterations=30, lr=1e-2, lr_step=None, n=3,
                generator=GeneratorConfig(latent_hw=4, stages=2, channels=8))
    return DipConfig(**{**base, **kw})


def test_dip_loss_decreases(small):
    model, trace = dip_train(small.stream, small.coils, tiny_cfg(iterations=80, batch=2))
    assert trace[-10:].mean() < 0.5 * trace[:10].mean()
    frames = dip_infer(model)
    assert frames.frames.shape == (10, 16, 16)


def test_dip_is_deterministic_and_thread_invariant(small):
    a, _ = dip_reconstruct(small.stream, small.coils, tiny_cfg(batch=3))
    b, _ = dip_reconstruct(small.stream, small.coils, tiny_cfg(batch=3, threads=3))
    np.testing.assert_array_equal(a.loss_trace, b.loss_trace)
    np.testing.assert_array_equal(a.series.frames, b.series.frames)


def test_dip_fractional_inference(small):
    _, model = dip_reconstruct(small.stream, small.coils, tiny_cfg(iterations=5))
    s = dip_infer(model, times=[0.0, 0.5, 1.0])
    assert s.K == 3
    np.testing.assert_allclose(s.times, [0, 0.5, 1])


def test_dip_independent_latents(small):
    _, model = dip_reconstruct(small.stream, small.coils, tiny_cfg(iterations=5, latent_mode="independent"))
    with pytest.raises(ValueError):
        model.latent(0.5)
    assert not np.allclose(model.latents[0], model.latents[1])


def test_dip_rejects_bad_config(small):
    with pytest.raises(ValueError):
        tiny_cfg(n=4)
    with pytest.raises(ValueError):
        dip_train(small.stream, small.coils, tiny_cfg(generator=GeneratorConfig(latent_hw=4, stages=1)))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_dip_abort_names_iteration(small):
    with pytest.raises(dc.NumericalAbort) as err:
        dip_train(small.stream, small.coils, tiny_cfg(lr=1e300, iterations=20))
    assert err.value.iteration is not None


def test_presets():
    r, d = DipConfig.retro(), DipConfig.dynamic()
    assert (r.n, r.lr_step, r.latent_hi, r.segments) == (13, 2000, 0.1, 1)
    assert (d.n, d.lr_step, d.latent_hi, d.segments, d.iterations) == (5, None, 10.0, 14, 20000)
    assert r.lr_at(0) == 1e-3 and r.lr_at(2000) == 5e-4 and r.lr_at(4000) == 2.5e-4
