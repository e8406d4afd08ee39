import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tddip import forward as fw


def brute_dft(x, coords):
    n1, n2 = x.shape
    out = np.zeros(len(coords), complex)
    for p, (kx, ky) in enumerate(coords):
        for i in range(n1):
            for j in range(n2):
                out[p] += x[i, j] * np.exp(-1j * (kx * (i - n1 // 2) + ky * (j - n2 // 2)))
    return out


def rand_image(rng, n):
    return rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))


def test_spoke_angle_sequence():
    cfg = fw.TrajectoryConfig()
    assert fw.spoke_angle(0, cfg) == 0.0
    assert fw.spoke_angle(1, cfg) == pytest.approx(math.radians(111.25), abs=1e-12)
    assert fw.spoke_angle(2, cfg) == pytest.approx(math.radians(222.5), abs=1e-12)
    assert fw.spoke_angle(4, cfg) == pytest.approx(math.radians(85.0), abs=1e-12)


def test_default_increment_is_periodic():
    # 111.25 deg = 89/144 of pi: after 144 spokes the same lines through the origin recur
    cfg = fw.TrajectoryConfig()
    for k in range(5):
        d = (fw.spoke_angle(k + 144, cfg) - fw.spoke_angle(k, cfg)) % np.pi
        assert min(d, np.pi - d) < 1e-9


def test_exact_golden_angle_fills_without_repeats():
    cfg = fw.TrajectoryConfig(dtheta=math.radians(fw.GOLDEN_ANGLE_DEG))
    ang = np.sort(np.array([fw.spoke_angle(k, cfg) for k in range(1000)]) % np.pi)
    gaps = np.diff(np.concatenate([ang, [ang[0] + np.pi]]))
    assert gaps.min() > 1e-9
    assert gaps.max() < 2 * np.pi / 1000


def test_readout_radii_and_dc():
    cfg = fw.TrajectoryConfig(n_image=8)
    w = fw.readout_radii(cfg)
    assert len(w) == 16
    assert w[8] == 0.0 and w[0] == -np.pi
    np.testing.assert_allclose(np.diff(w), np.pi / 8)
    c = fw.radial_coords(0.7, cfg)
    np.testing.assert_array_equal(c[8], [0.0, 0.0])
    assert np.all(c >= -np.pi) and np.all(c < np.pi)


def test_m_omega_enforced():
    with pytest.raises(ValueError):
        fw.TrajectoryConfig(n_image=8, m_omega=10)


def test_density_weights_floor():
    cfg = fw.TrajectoryConfig(n_image=8)
    w = fw.density_weights(cfg)
    assert np.all(w > 0)
    assert w[8] == pytest.approx(np.pi / 32)


@pytest.mark.parametrize("n", [4, 6])
def test_nudft_matches_brute_force(rng, n):
    x = rand_image(rng, n)
    coords = rng.uniform(-np.pi, np.pi, (9, 2))
    np.testing.assert_allclose(fw.nudft_apply(x, coords), brute_dft(x, coords), rtol=1e-10, atol=1e-10)


def test_nudft_on_grid_equals_fft(rng):
    n = 8
    x = rand_image(rng, n)
    k = 2 * np.pi * (np.arange(n) - n // 2) / n
    coords = np.array([(a, b) for a in k for b in k])
    ref = np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(x))).reshape(-1)
    np.testing.assert_allclose(fw.nudft_apply(x, coords), ref, rtol=1e-10, atol=1e-9)


def test_dc_is_image_sum(rng):
    x = rand_image(rng, 8)
    assert fw.nudft_apply(x, [[0.0, 0.0]])[0] == pytest.approx(x.sum(), rel=1e-12)


def test_horizontal_spoke_is_projection_transform(rng):
    # a spoke at angle 0 samples the 1D transform of the sums over the second axis
    cfg = fw.TrajectoryConfig(n_image=8)
    x = rand_image(rng, 8)
    w = fw.readout_radii(cfg)
    proj = x.sum(axis=1)
    xi = np.arange(8) - 4
    ref = np.array([np.sum(proj * np.exp(-1j * kx * xi)) for kx in w])
    np.testing.assert_allclose(fw.nudft_apply(x, fw.radial_coords(0.0, cfg)), ref, rtol=1e-10, atol=1e-9)


def test_minus_pi_equals_plus_pi_for_integer_grid(rng):
    x = rand_image(rng, 8)
    a = fw.nudft_apply(x, [[-np.pi, 0.3]])
    b = brute_dft(x, [[np.pi, 0.3]])
    np.testing.assert_allclose(a, b, rtol=1e-10)


def test_rejects_out_of_range():
    with pytest.raises(ValueError):
        fw.nudft_apply(np.ones((4, 4)), [[np.pi, 0.0]])


@pytest.mark.parametrize("op_cls", [fw.NudftOperator, fw.NufftOperator])
def test_operator_adjoint_dot(rng, op_cls):
    for _ in range(5):
        coords = rng.uniform(-np.pi, np.pi, (40, 2))
        op = op_cls(coords, 16)
        x = rand_image(rng, 16)
        y = rng.standard_normal(40) + 1j * rng.standard_normal(40)
        lhs = np.vdot(op.apply(x), y)
        rhs = np.vdot(x, op.adjoint(y))
        assert abs(lhs - rhs) <= 1e-10 * abs(lhs)


def test_nudft_adjoint_function(rng):
    coords = rng.uniform(-np.pi, np.pi, (12, 2))
    y = rng.standard_normal(12) + 1j * rng.standard_normal(12)
    np.testing.assert_allclose(fw.nudft_adjoint(y, coords, 8), fw.NudftOperator(coords, 8).adjoint(y),
                               rtol=1e-12)


def test_gridded_matches_exact():
    worst = 0.0
    cfg = fw.TrajectoryConfig()
    for trial in range(20):
        rng = np.random.default_rng(trial)
        x = rand_image(rng, 64)
        coords = np.concatenate([fw.radial_coords(fw.spoke_angle(k, cfg), cfg) for k in range(13)])
        ref = fw.nudft_apply(x, coords)
        est = fw.nufft_apply(x, coords)
        worst = max(worst, np.max(np.abs(est - ref)) / np.max(np.abs(ref)))
    assert worst <= 1e-3


def test_gridded_adjoint_matches_exact(rng):
    cfg = fw.TrajectoryConfig(n_image=32)
    coords = fw.radial_coords(0.4, cfg)
    y = rng.standard_normal(64) + 1j * rng.standard_normal(64)
    ref = fw.nudft_adjoint(y, coords, 32)
    est = fw.nufft_adjoint(y, coords, 32)
    assert np.max(np.abs(est - ref)) / np.max(np.abs(ref)) <= 5e-3


def test_kernel_wider_than_grid_rejected():
    with pytest.raises(ValueError):
        fw.NufftOperator(np.zeros((1, 2)), 2, fw.GridConfig(oversampling=2, width=4))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 40), st.integers(0, 39))
def test_window_indices_properties(K, k0):
    k0 = k0 % K
    for n in range(1, K + 1, 2):
        idx = fw.window_indices(k0, n, K)
        assert len(idx) == n
        assert idx == list(range(idx[0], idx[0] + n))
        assert 0 <= idx[0] and idx[-1] < K
        assert k0 in idx
        if (n - 1) // 2 <= k0 <= K - 1 - (n - 1) // 2:
            assert idx[0] == k0 - (n - 1) // 2


def test_window_indices_examples_and_errors():
    assert fw.window_indices(0, 5, 20) == [0, 1, 2, 3, 4]
    assert fw.window_indices(19, 5, 20) == [15, 16, 17, 18, 19]
    assert fw.window_indices(10, 5, 20) == [8, 9, 10, 11, 12]
    for args in [(0, 4, 20), (0, 0, 20), (0, 21, 20), (20, 5, 20)]:
        with pytest.raises(ValueError):
            fw.window_indices(*args)


def test_system_single_coil_and_linearity(rng):
    cfg = fw.TrajectoryConfig(n_image=16)
    win = fw.make_window(cfg, 3, 3, K=10)
    ones = fw.CoilMaps(np.ones((1, 16, 16)))
    x, y = rand_image(rng, 16), rand_image(rng, 16)
    ref = fw.nudft_apply(x, win.all_coords())
    np.testing.assert_allclose(fw.apply_system(x, win, ones, "exact")[0], ref, rtol=1e-10)
    a, b = 0.3 - 1j, 2.0
    op = fw.SystemOperator(win, ones)
    lhs = op.apply(a * x + b * y)
    rhs = a * op.apply(x) + b * op.apply(y)
    assert np.linalg.norm(lhs - rhs) <= 1e-10 * np.linalg.norm(rhs)


def test_system_multicoil_adjoint(rng):
    cfg = fw.TrajectoryConfig(n_image=16)
    win = fw.make_window(cfg, 5, 5, K=12)
    coils = fw.CoilMaps(rng.standard_normal((3, 16, 16)) + 1j * rng.standard_normal((3, 16, 16)))
    for method in ("exact", "gridded"):
        op = fw.SystemOperator(win, coils, method)
        x = rand_image(rng, 16)
        y = rng.standard_normal((3, op.op.n_samples)) + 1j * rng.standard_normal((3, op.op.n_samples))
        lhs, rhs = np.vdot(op.apply(x), y), np.vdot(x, op.adjoint(y))
        assert abs(lhs - rhs) <= 1e-10 * abs(lhs)


def test_system_shape_errors(rng):
    cfg = fw.TrajectoryConfig(n_image=8)
    win = fw.make_window(cfg, 0, 1, K=4)
    op = fw.SystemOperator(win, fw.CoilMaps(np.ones((2, 8, 8))))
    with pytest.raises(ValueError):
        op.apply(np.ones((6, 6)))
    with pytest.raises(ValueError):
        op.adjoint(np.ones((3, 16)))
    with pytest.raises(ValueError):
        fw.SystemOperator(win, fw.CoilMaps(np.ones((1, 8, 8))), method="fft")
