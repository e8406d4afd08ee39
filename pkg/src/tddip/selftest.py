"""Built-in numerical checks: adjoint dot tests, gridding accuracy, gradients, RSNR.

Operators are looked up through their modules at run time, so a patched
operator (for fault-injection tests) is the one that gets checked and the
failing check carries its name.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from tddip import diffcore, forward, generator, metrics

GROUPS = ("adjoint", "gridding", "gradcheck", "rsnr")
TRIALS = 20


@dataclass
class Check:
    name: str
    value: float
    tol: float
    seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return bool(np.isfinite(self.value) and self.value < self.tol)

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        return f"{status}  {self.name:<28} {self.value:10.3e}  (tol {self.tol:.0e}, {self.seconds:.2f}s)"


def _crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def dot_test_error(op, x, y) -> float:
    lhs = np.vdot(op.apply(x), y)
    rhs = np.vdot(x, op.adjoint(y))
    return float(abs(lhs - rhs) / max(abs(lhs), 1e-300))


def _timed(name, tol, fn) -> Check:
    t0 = time.perf_counter()
    val = fn()
    return Check(name, float(val), tol, time.perf_counter() - t0)


def adjoint_checks(trials: int = TRIALS, seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    n = 32
    traj = forward.TrajectoryConfig(n)

    def coords():
        k = int(rng.integers(0, 1000))
        return np.concatenate([forward.radial_coords(forward.spoke_angle(k + j, traj), traj) for j in range(5)])

    def nudft():
        return max(dot_test_error(forward.NudftOperator(c, n), _crandn(rng, n, n), _crandn(rng, len(c)))
                   for c in (coords() for _ in range(trials)))

    def gridded():
        return max(dot_test_error(forward.NufftOperator(c, n), _crandn(rng, n, n), _crandn(rng, len(c)))
                   for c in (coords() for _ in range(trials)))

    def system():
        errs = []
        for _ in range(trials):
            win = forward.make_window(traj, int(rng.integers(0, 20)), 5, K=20,
                                      angles=rng.uniform(0, 2 * np.pi, 20))
            coils = forward.CoilMaps(_crandn(rng, 3, n, n))
            op = forward.SystemOperator(win, coils)
            errs.append(dot_test_error(op, _crandn(rng, n, n), _crandn(rng, 3, op.op.n_samples)))
        return max(errs)

    return [_timed("adjoint:nudft", 1e-12, nudft),
            _timed("adjoint:gridded-nufft", 1e-6, gridded),
            _timed("adjoint:multicoil-system", 1e-6, system)]


def gridding_checks(trials: int = TRIALS, seed: int = 1) -> list[Check]:
    rng = np.random.default_rng(seed)
    traj = forward.TrajectoryConfig(64)

    def worst():
        errs = []
        for _ in range(trials):
            k0 = int(rng.integers(0, 1000))
            c = np.concatenate([forward.radial_coords(forward.spoke_angle(k0 + j, traj), traj) for j in range(5)])
            x = _crandn(rng, 64, 64)
            ref = forward.nudft_apply(x, c)
            est = forward.NufftOperator(c, 64).apply(x)
            errs.append(np.max(np.abs(est - ref)) / np.max(np.abs(ref)))
        return max(errs)

    return [_timed("gridding:vs-exact-nudft", 1e-3, worst)]


def _primitive_cases(rng):
    dc = diffcore
    op = forward.NudftOperator(rng.uniform(-np.pi, np.pi, (16, 2)), 6)
    cmap = _crandn(rng, 6, 6)
    t3 = rng.standard_normal((3, 6, 6))
    t2 = rng.standard_normal((2, 6, 6))
    t_up = rng.standard_normal((2, 12, 12))
    t_k = _crandn(rng, 16)
    relu_x = rng.standard_normal((2, 6, 6))
    relu_x[np.abs(relu_x) < 1e-2] = 0.5
    return {
        "conv2d": (lambda t, i: dc.record_l2_loss(t, dc.record_conv2d(t, *i), t3),
                   [rng.standard_normal((2, 6, 6)), rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)]),
        "batchnorm2d": (lambda t, i: dc.record_l2_loss(t, dc.record_batchnorm2d(t, *i), t3),
                        [rng.standard_normal((3, 6, 6)), rng.uniform(0.5, 2, 3), rng.standard_normal(3)]),
        "relu": (lambda t, i: dc.record_l2_loss(t, dc.record_relu(t, i[0]), t2), [relu_x]),
        "upsample_nn2x": (lambda t, i: dc.record_l2_loss(t, dc.record_upsample_nn2x(t, i[0]), t_up),
                          [rng.standard_normal((2, 6, 6))]),
        "complex_pixmul": (lambda t, i: dc.record_l2_loss(t, dc.record_complex_pixmul(t, i[0], cmap), t2),
                           [rng.standard_normal((2, 6, 6))]),
        "nudft_layer": (lambda t, i: dc.record_l2_loss(t, dc.record_nudft_layer(t, i[0], op), t_k),
                        [rng.standard_normal((2, 6, 6))]),
        "l2_loss": (lambda t, i: dc.record_l2_loss(t, i[0], np.ones(7)), [rng.standard_normal(7)]),
    }


def composed_case(rng):
    """Generator + coil weighting + NuFFT + loss on a tiny network."""
    dc = diffcore
    cfg = generator.GeneratorConfig(latent_hw=2, stages=1, channels=3)
    params = generator.init_generator(cfg, int(rng.integers(0, 2 ** 31)))
    names = list(params.tensors)
    cmaps = _crandn(rng, 2, 4, 4)
    op = forward.NufftOperator(rng.uniform(-np.pi, np.pi, (10, 2)), 4)
    data = _crandn(rng, 2, 10)

    def build(tape, ids):
        out = generator.generate(tape, params, ids[0], leaves=dict(zip(names, ids[1:])))
        terms = [dc.record_l2_loss(tape, dc.record_nudft_layer(tape, dc.record_complex_pixmul(tape, out, c), op), d)
                 for c, d in zip(cmaps, data)]
        return dc.record_add(tape, *terms)

    return build, [rng.uniform(0, 1, cfg.latent_shape())] + [params.tensors[n] for n in names]


def gradient_checks(trials: int = 3, seed: int = 2) -> list[Check]:
    rng = np.random.default_rng(seed)
    out = []
    worst: dict[str, float] = {}
    t0 = time.perf_counter()
    for _ in range(trials):
        for name, (build, inputs) in _primitive_cases(rng).items():
            worst[name] = max(worst.get(name, 0.0), max(diffcore.gradcheck(build, inputs)))
    per = (time.perf_counter() - t0) / max(len(worst), 1)
    out += [Check(f"gradcheck:{k}", v, 1e-4, per) for k, v in worst.items()]
    out.append(_timed("gradcheck:composed", 1e-3,
                      lambda: max(max(diffcore.gradcheck(*composed_case(rng))) for _ in range(trials))))
    return out


def rsnr_grid_search(ref, est, steps: int = 41, rounds: int = 12) -> float:
    """Best affine fit found by zooming grid search (independent of the closed form).

    Searches over ``a`` and ``c = b + a * mean(est)``, which keeps the two
    directions of the residual valley decoupled.
    """
    r, e = np.abs(ref).ravel(), np.abs(est).ravel()
    ec = e - e.mean()
    a_c, c_c = 0.0, float(r.mean())
    a_w = 4 * (r.std() / max(e.std(), 1e-12)) + 1.0
    c_w = 4 * np.abs(r).max() + 1.0
    best = np.inf
    for _ in range(rounds):
        A = a_c + np.linspace(-a_w, a_w, steps)
        C = c_c + np.linspace(-c_w, c_w, steps)
        res = np.linalg.norm(r[None, None, :] - A[:, None, None] * ec[None, None, :] - C[None, :, None], axis=2)
        i, j = np.unravel_index(np.argmin(res), res.shape)
        best, a_c, c_c = res[i, j], A[i], C[j]
        a_w, c_w = a_w * 4 / steps, c_w * 4 / steps
    return float(20 * np.log10(np.linalg.norm(r) / best))


def rsnr_checks(pairs: int = 50, seed: int = 3) -> list[Check]:
    rng = np.random.default_rng(seed)

    def vs_grid():
        worst = 0.0
        for _ in range(pairs):
            ref = _crandn(rng, 8, 8)
            est = ref * rng.uniform(0.3, 3) + rng.uniform(0.05, 1) * _crandn(rng, 8, 8)
            worst = max(worst, abs(metrics.rsnr(ref, est).db - rsnr_grid_search(ref, est)))
        return worst

    def invariance():
        worst = 0.0
        for _ in range(pairs):
            ref = rng.random((8, 8))
            est = ref + 0.1 * rng.random((8, 8))
            base = metrics.rsnr(ref, est).db
            # a power-of-two scale and a representable offset keep the arithmetic exact
            worst = max(worst, abs(metrics.rsnr(ref, 4.0 * np.abs(est) + 0.5).db - base))
        return worst

    return [_timed("rsnr:closed-form-vs-grid", 0.01, vs_grid),
            _timed("rsnr:affine-invariance", 1e-9, invariance)]


def run(groups=GROUPS) -> list[Check]:
    unknown = set(groups) - set(GROUPS)
    if unknown:
        raise ValueError(f"unknown selftest group(s): {', '.join(sorted(unknown))}")
    table = {"adjoint": adjoint_checks, "gridding": gridding_checks,
             "gradcheck": gradient_checks, "rsnr": rsnr_checks}
    out = []
    for g in GROUPS:
        if g in groups:
            out += table[g]()
    return out
