import numpy as np
import pytest

from tddip import forward as fw
from tddip import phantom as ph


def test_phantom_shapes_and_values():
    cfg = ph.PhantomConfig()
    series = ph.make_cine_phantom(cfg)
    assert series.frames.shape == (20, 64, 64)
    assert np.all(np.isfinite(series.frames))
    np.testing.assert_allclose(series.times, np.arange(20))
    assert np.abs(series.frames).max() < 2.0


def test_heart_moves_and_background_is_static():
    cfg = ph.PhantomConfig()
    series = ph.make_cine_phantom(cfg)
    mag = np.abs(series.frames)
    moving = mag.std(axis=0)
    mask = ph.heart_mask(cfg)
    assert moving[mask].max() > 0.2
    assert moving[~mask].max() < 1e-12


def test_inner_radius_range():
    cfg = ph.PhantomConfig()
    r = np.array([ph.inner_radius(t, cfg) for t in np.linspace(0, 19, 400)])
    assert r.max() <= cfg.inner_radius + 1e-12
    assert r.min() >= cfg.inner_radius * (1 - cfg.depth) - 1e-12
    assert r.max() - r.min() > 0.5 * cfg.depth * cfg.inner_radius


def test_config_validation():
    with pytest.raises(ValueError):
        ph.PhantomConfig(inner_radius=0.4, outer_radius=0.3)
    with pytest.raises(ValueError):
        ph.PhantomConfig(depth=0.1, jitter=0.2)


def test_coil_maps():
    one = ph.make_coil_maps(1, 16)
    np.testing.assert_array_equal(one.maps, np.ones((1, 16, 16)))
    maps = ph.make_coil_maps(4, 32, seed=2)
    assert maps.maps.shape == (4, 32, 32)
    assert maps.rss().min() > 0
    np.testing.assert_array_equal(maps.maps, ph.make_coil_maps(4, 32, seed=2).maps)


def test_simulation_matches_system_operator():
    cfg = ph.PhantomConfig(n_image=16, K=6)
    traj = fw.TrajectoryConfig(16)
    coils = ph.make_coil_maps(2, 16, seed=1)
    truth = ph.make_cine_phantom(cfg)
    stream = ph.simulate_stream(truth, traj, coils)
    assert stream.K == 6 and stream.coils == 2
    for k in (0, 3, 5):
        win = fw.make_window(traj, k, 1, K=6)
        np.testing.assert_array_equal(stream.spokes[k].samples, fw.apply_system(truth.frames[k], win, coils))


def test_noise_statistics():
    cfg = ph.PhantomConfig(n_image=16, K=40)
    traj = fw.TrajectoryConfig(16)
    coils = ph.make_coil_maps(1, 16)
    truth = ph.make_cine_phantom(cfg)
    clean = ph.simulate_stream(truth, traj, coils).samples()
    noisy = ph.simulate_stream(truth, traj, coils, noise=0.5, seed=3).samples()
    d = (noisy - clean).ravel()
    assert np.mean(np.abs(d) ** 2) == pytest.approx(0.25, rel=0.1)
    assert np.var(d.real) == pytest.approx(np.var(d.imag), rel=0.15)


def test_retrospective_mode_freezes_frames():
    cfg = ph.PhantomConfig(n_image=16, K=3)
    traj = fw.TrajectoryConfig(16)
    coils = ph.make_coil_maps(1, 16)
    stream = ph.simulate_stream(cfg, traj, coils, mode="retrospective", phases=3, spokes_per_phase=4)
    assert stream.K == 12
    img = ph.phantom_frame(1.0, cfg)
    win = fw.make_window(traj, 6, 1, K=12)
    np.testing.assert_allclose(stream.spokes[6].samples, fw.apply_system(img, win, coils), rtol=1e-12)
    with pytest.raises(ValueError):
        ph.simulate_stream(cfg, traj, coils, mode="sideways")


def test_desk_scenario_is_seeded():
    a = ph.desk_scenario(ph.PhantomConfig(n_image=16, K=5), C=2, seed=4)
    b = ph.desk_scenario(ph.PhantomConfig(n_image=16, K=5), C=2, seed=4)
    np.testing.assert_array_equal(a.stream.samples(), b.stream.samples())
