"""Tape-based reverse-mode differentiation for the generator and its loss.

Only the operators needed by the generator, the coil weighting, the
nonuniform Fourier layer and the Euclidean loss are supported.  Tensors are
plain ``numpy`` arrays laid out channels x height x width; complex images are
carried as two real channels (real, imaginary).

Typical use::

    tape = Tape()
    x = tape.leaf(image)
    w = tape.leaf(weight, name="conv0.weight", param=True)
    b = tape.leaf(bias, name="conv0.bias", param=True)
    y = record_conv2d(tape, x, w, b, pad=1)
    loss = record_l2_loss(tape, y, target)
    grads = backward(tape, loss)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when operator inputs have incompatible shapes."""


class NumericalAbort(RuntimeError):
    """Raised when a non-finite value shows up during optimization."""

    def __init__(self, message: str, iteration: int | None = None, name: str | None = None):
        super().__init__(message)
        self.iteration = iteration
        self.name = name

    def diagnostics(self) -> dict[str, Any]:
        return {"message": str(self), "iteration": self.iteration, "parameter": self.name}


@dataclass
class Node:
    op: str
    inputs: tuple[int, ...]
    attrs: dict[str, Any]
    value: np.ndarray
    ctx: Any = None
    name: str | None = None
    param: bool = False


@dataclass
class Tape:
    """Append-only record of a forward computation."""

    nodes: list[Node] = field(default_factory=list)

    def leaf(self, value, name: str | None = None, param: bool = False) -> int:
        arr = np.asarray(value, dtype=np.float64)
        self.nodes.append(Node("leaf", (), {}, arr, None, name, param))
        return len(self.nodes) - 1

    def value(self, node: int) -> np.ndarray:
        return self.nodes[node].value

    def params(self) -> dict[str, int]:
        return {n.name: i for i, n in enumerate(self.nodes) if n.param}

    def _record(self, kind: str, inputs: tuple[int, ...], **attrs) -> int:
        for i in inputs:
            if not 0 <= i < len(self.nodes):
                raise IndexError(f"node {i} is not on this tape")
        fwd = _OPS[kind][0]
        value, ctx = fwd(*(self.nodes[i].value for i in inputs), **attrs)
        self.nodes.append(Node(kind, inputs, attrs, value, ctx))
        return len(self.nodes) - 1

    def replay(self) -> list[np.ndarray]:
        """Re-evaluate every recorded operation from the stored leaves.

        Returns the recomputed values; the tape itself is left untouched.
        """
        values: list[np.ndarray] = []
        for node in self.nodes:
            if node.op == "leaf":
                values.append(node.value)
            else:
                out, _ = _OPS[node.op][0](*(values[i] for i in node.inputs), **node.attrs)
                values.append(out)
        return values


# ---------------------------------------------------------------------------
# forward / backward kernels
#
# forward(*input_values, **attrs) -> (value, ctx)
# backward(grad_out, ctx, *input_values, **attrs) -> tuple of input grads


def _conv2d_fwd(x, w, b, pad):
    if x.ndim != 3 or w.ndim != 4:
        raise ShapeError(f"conv2d expects x (C,H,W) and w (O,C,kh,kw), got {x.shape} and {w.shape}")
    c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    if ci != c:
        raise ShapeError(f"conv2d: input has {c} channels but weights expect {ci}")
    if b.shape != (o,):
        raise ShapeError(f"conv2d: bias shape {b.shape} does not match {o} filters")
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    ho, wo = h + 2 * pad - kh + 1, wd + 2 * pad - kw + 1
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d: kernel larger than padded input")
    # (C, kh, kw, Ho, Wo) patch matrix
    cols = sliding_window_view(xp, (kh, kw), axis=(1, 2)).transpose(0, 3, 4, 1, 2)
    cols = np.ascontiguousarray(cols).reshape(c * kh * kw, ho * wo)
    out = (w.reshape(o, -1) @ cols).reshape(o, ho, wo) + b[:, None, None]
    return out, (cols, xp.shape)


def _conv2d_bwd(g, ctx, x, w, b, pad):
    cols, xp_shape = ctx
    o, c, kh, kw = w.shape
    _, ho, wo = g.shape
    g2 = g.reshape(o, -1)
    gw = (g2 @ cols.T).reshape(w.shape)
    gb = g2.sum(axis=1)
    gcols = (w.reshape(o, -1).T @ g2).reshape(c, kh, kw, ho, wo)
    gxp = np.zeros(xp_shape)
    for u in range(kh):
        for v in range(kw):
            gxp[:, u:u + ho, v:v + wo] += gcols[:, u, v]
    gx = gxp[:, pad:xp_shape[1] - pad, pad:xp_shape[2] - pad]
    return gx, gw, gb


def _bn_fwd(x, gamma, beta, eps):
    if gamma.shape != (x.shape[0],) or beta.shape != (x.shape[0],):
        raise ShapeError("batchnorm2d: gamma/beta need one entry per channel")
    mu = x.mean(axis=(1, 2), keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=(1, 2), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return gamma[:, None, None] * xhat + beta[:, None, None], (xhat, inv)


def _bn_bwd(g, ctx, x, gamma, beta, eps):
    xhat, inv = ctx
    m = x.shape[1] * x.shape[2]
    ggamma = (g * xhat).sum(axis=(1, 2))
    gbeta = g.sum(axis=(1, 2))
    gxhat = g * gamma[:, None, None]
    gx = inv / m * (m * gxhat - gxhat.sum(axis=(1, 2), keepdims=True)
                    - xhat * (gxhat * xhat).sum(axis=(1, 2), keepdims=True))
    return gx, ggamma, gbeta


def _relu_fwd(x):
    mask = x > 0
    return np.where(mask, x, 0.0), mask


def _relu_bwd(g, mask, x):
    return (np.where(mask, g, 0.0),)


def _up_fwd(x):
    return np.repeat(np.repeat(x, 2, axis=-2), 2, axis=-1), None


def _up_bwd(g, ctx, x):
    c, h, w = x.shape
    return (g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)),)


def _as_complex(x):
    return x[0] + 1j * x[1]


def _as_channels(z):
    return np.stack([z.real, z.imag])


def _pixmul_fwd(x, c):
    if x.ndim != 3 or x.shape[0] != 2:
        raise ShapeError(f"complex_pixmul expects a 2-channel image, got {x.shape}")
    if c.shape != x.shape[1:]:
        raise ShapeError(f"complex_pixmul: map {c.shape} does not match image {x.shape[1:]}")
    return _as_channels(_as_complex(x) * c), None


def _pixmul_bwd(g, ctx, x, c):
    return (_as_channels(np.conj(c) * _as_complex(g)),)


def _linop_fwd(x, op):
    if x.ndim != 3 or x.shape[0] != 2:
        raise ShapeError(f"nudft layer expects a 2-channel image, got {x.shape}")
    return _as_channels(op.apply(_as_complex(x))), None


def _linop_bwd(g, ctx, x, op):
    # real loss: (dL/dRe + j dL/dIm) of the input is the adjoint of the same of the output
    return (_as_channels(op.adjoint(_as_complex(g))),)


def _l2_fwd(pred, target):
    r = pred - target
    return np.array(float(np.sum(r * r))), r


def _l2_bwd(g, r, pred, target):
    return (2.0 * g * r,)


def _sum_fwd(x):
    return np.array(float(np.sum(x))), None


def _sum_bwd(g, ctx, x):
    return (np.full(x.shape, float(g)),)


def _add_fwd(*xs):
    out = xs[0].copy()
    for x in xs[1:]:
        if x.shape != out.shape:
            raise ShapeError(f"add: shape mismatch {x.shape} vs {out.shape}")
        out = out + x
    return out, None


def _add_bwd(g, ctx, *xs):
    return tuple(g for _ in xs)


_OPS: dict[str, tuple[Callable, Callable]] = {
    "conv2d": (_conv2d_fwd, _conv2d_bwd),
    "batchnorm2d": (_bn_fwd, _bn_bwd),
    "relu": (_relu_fwd, _relu_bwd),
    "upsample_nn2x": (_up_fwd, _up_bwd),
    "complex_pixmul": (_pixmul_fwd, _pixmul_bwd),
    "nudft": (_linop_fwd, _linop_bwd),
    "l2_loss": (_l2_fwd, _l2_bwd),
    "sum": (_sum_fwd, _sum_bwd),
    "add": (_add_fwd, _add_bwd),
}


# ---------------------------------------------------------------------------
# recording API


def record_conv2d(tape: Tape, x: int, w: int, b: int, pad: int = 1) -> int:
    """Stride-1 cross-correlation of ``x`` with ``w`` plus per-filter bias."""
    return tape._record("conv2d", (x, w, b), pad=int(pad))


def record_batchnorm2d(tape: Tape, x: int, gamma: int, beta: int, eps: float = 1e-5) -> int:
    """Per-channel normalization over the spatial locations of one sample.

    Batch statistics are always used; no running averages are kept.
    """
    if not eps > 0:
        raise ValueError(f"batchnorm eps must be positive, got {eps}")
    return tape._record("batchnorm2d", (x, gamma, beta), eps=float(eps))


def record_relu(tape: Tape, x: int) -> int:
    return tape._record("relu", (x,))


def record_upsample_nn2x(tape: Tape, x: int) -> int:
    return tape._record("upsample_nn2x", (x,))


def record_complex_pixmul(tape: Tape, x: int, c) -> int:
    """Multiply a 2-channel complex image by a constant complex map."""
    return tape._record("complex_pixmul", (x,), c=np.asarray(c, dtype=np.complex128))


def record_nudft_layer(tape: Tape, x: int, op) -> int:
    """Apply a linear k-space sampling operator to a 2-channel image.

    ``op`` is anything with ``apply(image) -> samples`` and
    ``adjoint(samples) -> image`` (see :mod:`tddip.forward`); a raw
    ``(P, 2)`` coordinate array is wrapped in the exact NUDFT.  The output
    node holds the samples as a ``(2, P)`` real/imaginary stack.
    """
    if not (hasattr(op, "apply") and hasattr(op, "adjoint")):
        from tddip.forward import NudftOperator

        n = tape.value(x).shape[-1]
        op = NudftOperator(op, n)
    return tape._record("nudft", (x,), op=op)


def record_l2_loss(tape: Tape, pred: int, target) -> int:
    """Squared Euclidean distance between a node and a constant target.

    A complex ``target`` is compared against the (2, P) real/imaginary
    stack produced by :func:`record_nudft_layer`.
    """
    target = np.asarray(target)
    if np.iscomplexobj(target):
        target = _as_channels(target)
    target = target.astype(np.float64)
    pv = tape.value(pred)
    if pv.size != target.size:
        raise ShapeError(f"l2_loss: prediction has {pv.size} entries, target {target.size}")
    return tape._record("l2_loss", (pred,), target=target.reshape(pv.shape))


def record_sum(tape: Tape, x: int) -> int:
    return tape._record("sum", (x,))


def record_add(tape: Tape, *xs: int) -> int:
    return tape._record("add", tuple(xs))


def backward(tape: Tape, loss: int, all_leaves: bool = False) -> dict:
    """Reverse sweep from a scalar node.

    Returns gradients keyed by parameter name (nodes created with
    ``param=True``).  With ``all_leaves`` the dict is keyed by node id and
    covers every leaf, parameters included.
    """
    lv = tape.value(loss)
    if lv.size != 1 or lv.ndim > 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {lv.shape}")
    grads: list[np.ndarray | None] = [None] * len(tape.nodes)
    grads[loss] = np.ones_like(lv)
    for i in range(loss, -1, -1):
        g = grads[i]
        node = tape.nodes[i]
        if g is None or node.op == "leaf":
            continue
        ins = [tape.nodes[j].value for j in node.inputs]
        gin = _OPS[node.op][1](g, node.ctx, *ins, **node.attrs)
        for j, gj in zip(node.inputs, gin):
            if gj is None:
                continue
            grads[j] = gj if grads[j] is None else grads[j] + gj
    out = {}
    for i, node in enumerate(tape.nodes):
        if node.op != "leaf" or not (node.param or all_leaves):
            continue
        g = grads[i] if grads[i] is not None else np.zeros_like(node.value)
        out[i if all_leaves else node.name] = g
    return out


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray], **hyper) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, **hyper)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update.  Returns new params and the same state object."""
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    for name in params:
        g = grads[name]
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalAbort(f"non-finite gradient for {name}", iteration=state.step + 1, name=name)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    new = {}
    for name, p in params.items():
        g = grads[name]
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * (g * g)
        mhat = state.m[name] / c1
        vhat = state.v[name] / c2
        new[name] = p - lr * mhat / (np.sqrt(vhat) + state.epsilon)
    return new, state


# ---------------------------------------------------------------------------
# finite-difference checking


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``f`` w.r.t. every entry of ``x`` (edited in place)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 0.0) -> float:
    """max |a - n| relative to the largest gradient magnitude (floored)."""
    scale = max(np.max(np.abs(numeric), initial=0.0), np.max(np.abs(analytic), initial=0.0), floor)
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric), initial=0.0) / scale)


def gradcheck(build: Callable[[Tape, list[int]], int], inputs: list[np.ndarray],
              h: float = 1e-5, floor_ratio: float = 1e-6) -> list[float]:
    """Compare reverse-mode and central-difference gradients of ``build``.

    ``build(tape, leaf_ids)`` records a scalar loss over the given leaves.
    Returns one relative error per input; the error denominator is floored at
    ``floor_ratio`` times the largest gradient seen over all inputs, so inputs
    whose true gradient is identically zero are judged on absolute noise.
    """
    inputs = [np.array(a, dtype=np.float64) for a in inputs]

    def run():
        tape = Tape()
        ids = [tape.leaf(a) for a in inputs]
        return tape, ids, build(tape, ids)

    tape, ids, loss = run()
    g = backward(tape, loss, all_leaves=True)
    analytic = [g[i] for i in ids]

    def f():
        t, _, l = run()
        return float(t.value(l))

    numeric = [numeric_grad(f, a, h) for a in inputs]
    top = max(max(np.max(np.abs(n), initial=0.0) for n in numeric), 1e-300)
    return [max_rel_error(a, n, floor_ratio * top) for a, n in zip(analytic, numeric)]
