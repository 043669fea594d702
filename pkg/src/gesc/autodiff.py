"""Reverse-mode automatic differentiation over real float64 arrays.

A tiny tape: each operation returns a ``Var`` holding the primal value and
closures that push the upstream gradient to its parents.  ``backward`` walks
the recorded graph once in reverse topological order and accumulates
gradients on the leaves.  Complex quantities never appear as complex dtypes;
a complex tensor of shape ``s`` is a real array of shape ``s + (2,)`` whose
trailing axis is (real, imaginary).  All complex-aware ops (``cmul``,
``cmatmul``, ``cinner``, ``crotate``, ...) differentiate through the real
components directly, which for holomorphic pieces coincides with the
conjugate Wirtinger derivative convention.

Ops accept either ``Var`` or plain array-likes.  When no argument is a
``Var`` the op returns a bare ndarray and records nothing, so inference
reuses the same code paths at zero tape cost.

Fused kernels (``crotate``, ``cinner``, ``lincomb2``, ``add_scaled``,
``segment_weighted_sum``) exist because the per-edge stage of the network
touches arrays of shape (num_arcs, d, 2); fusing keeps the number of
retained intermediates, and therefore peak memory, proportional to the
handful of named quantities in the message pipeline rather than to every
scalar multiply.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

__all__ = [
    "Var",
    "GradientTape",
    "value_of",
    "leaves_from",
    "backward",
    # arithmetic
    "add", "sub", "mul", "div", "neg", "scale", "add_scaled", "lincomb2",
    # elementwise
    "exp", "log", "log1p", "sqrt", "cos", "sin", "sigmoid", "relu",
    "maximum_const", "minimum_const",
    # shape / indexing
    "reshape", "transpose", "gather", "select_rc", "reduce_sum", "reduce_mean",
    "stop_gradient",
    # dense linear
    "matmul",
    # segment reductions (CSR-ordered)
    "segment_sum", "segment_weighted_sum", "segment_max_values",
    # complex trailing-2 kernels
    "cstack", "creal", "cimag", "conj", "cmul", "cmatmul", "cinner",
    "crotate", "csqnorm", "cabs",
]


class Var:
    """A tape node: primal value plus gradient closures toward its parents."""

    __slots__ = ("value", "grad", "_backs")

    def __init__(self, value, backs: tuple = ()):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._backs = backs  # tuple of (parent Var, vjp: g -> parent-shaped array)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        kind = "leaf" if not self._backs else f"{len(self._backs)} parents"
        return f"Var(shape={self.value.shape}, {kind})"


def value_of(x) -> np.ndarray:
    """Primal value of a Var, or the input coerced to float64 ndarray."""
    if isinstance(x, Var):
        return x.value
    return np.asarray(x, dtype=np.float64)


def leaves_from(params: dict[str, np.ndarray]) -> dict[str, Var]:
    """Wrap a named parameter set as leaf Vars sharing the given buffers."""
    return {name: Var(arr) for name, arr in params.items()}


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to ``shape`` after NumPy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _make(value: np.ndarray, *pairs) -> Var | np.ndarray:
    """Build a node from (maybe-Var operand, vjp) pairs; folds constants."""
    backs = tuple((p, fn) for p, fn in pairs if isinstance(p, Var))
    if not backs:
        return np.asarray(value, dtype=np.float64)
    return Var(value, backs)


# ---------------------------------------------------------------------------
# Arithmetic
# ---------------------------------------------------------------------------

def add(a, b):
    av, bv = value_of(a), value_of(b)
    return _make(av + bv,
                 (a, lambda g: _unbroadcast(g, av.shape)),
                 (b, lambda g: _unbroadcast(g, bv.shape)))


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    return _make(av - bv,
                 (a, lambda g: _unbroadcast(g, av.shape)),
                 (b, lambda g: _unbroadcast(-g, bv.shape)))


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    return _make(av * bv,
                 (a, lambda g: _unbroadcast(g * bv, av.shape)),
                 (b, lambda g: _unbroadcast(g * av, bv.shape)))


def div(a, b):
    av, bv = value_of(a), value_of(b)
    out = av / bv
    return _make(out,
                 (a, lambda g: _unbroadcast(g / bv, av.shape)),
                 (b, lambda g: _unbroadcast(-g * out / bv, bv.shape)))


def neg(a):
    av = value_of(a)
    return _make(-av, (a, lambda g: -g))


def scale(a, c: float):
    """Multiply by a python constant."""
    av = value_of(a)
    c = float(c)
    return _make(av * c, (a, lambda g: g * c))


def add_scaled(a, b, c: float):
    """Fused ``a + c * b`` with a single retained output."""
    av, bv = value_of(a), value_of(b)
    c = float(c)
    return _make(av + c * bv,
                 (a, lambda g: _unbroadcast(g, av.shape)),
                 (b, lambda g: _unbroadcast(g * c, bv.shape)))


def lincomb2(a, x, b, y):
    """Fused ``a*x + b*y`` where a, b broadcast against x, y (gate mixing)."""
    av, xv, bv, yv = value_of(a), value_of(x), value_of(b), value_of(y)
    return _make(av * xv + bv * yv,
                 (a, lambda g: _unbroadcast(g * xv, av.shape)),
                 (x, lambda g: _unbroadcast(g * av, xv.shape)),
                 (b, lambda g: _unbroadcast(g * yv, bv.shape)),
                 (y, lambda g: _unbroadcast(g * bv, yv.shape)))


# ---------------------------------------------------------------------------
# Elementwise
# ---------------------------------------------------------------------------

def exp(a):
    out = np.exp(value_of(a))
    return _make(out, (a, lambda g: g * out))


def log(a):
    av = value_of(a)
    return _make(np.log(av), (a, lambda g: g / av))


def log1p(a):
    av = value_of(a)
    return _make(np.log1p(av), (a, lambda g: g / (1.0 + av)))


def sqrt(a):
    out = np.sqrt(value_of(a))
    return _make(out, (a, lambda g: g / (2.0 * out)))


def cos(a):
    av = value_of(a)
    return _make(np.cos(av), (a, lambda g: -g * np.sin(av)))


def sin(a):
    av = value_of(a)
    return _make(np.sin(av), (a, lambda g: g * np.cos(av)))


def sigmoid(a):
    av = value_of(a)
    # numerically symmetric form, exact at both tails
    out = np.where(av >= 0, 1.0 / (1.0 + np.exp(-np.abs(av))),
                   np.exp(-np.abs(av)) / (1.0 + np.exp(-np.abs(av))))
    return _make(out, (a, lambda g: g * out * (1.0 - out)))


def relu(a):
    av = value_of(a)
    return _make(np.maximum(av, 0.0), (a, lambda g: g * (av > 0)))


def maximum_const(a, c: float):
    av = value_of(a)
    c = float(c)
    return _make(np.maximum(av, c), (a, lambda g: g * (av > c)))


def minimum_const(a, c: float):
    av = value_of(a)
    c = float(c)
    return _make(np.minimum(av, c), (a, lambda g: g * (av < c)))


# ---------------------------------------------------------------------------
# Shape and indexing
# ---------------------------------------------------------------------------

def reshape(a, shape):
    av = value_of(a)
    return _make(av.reshape(shape), (a, lambda g: g.reshape(av.shape)))


def transpose(a, axes):
    av = value_of(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(av.transpose(axes), (a, lambda g: g.transpose(inv)))


def gather(a, idx):
    """Row gather ``a[idx]``; the adjoint scatter-adds in index order."""
    av = value_of(a)
    idx = np.asarray(idx)

    def back(g):
        # bincount over a flattened composite index is much faster than add.at
        g = np.ascontiguousarray(g)
        width = int(np.prod(av.shape[1:], dtype=np.int64)) if av.ndim > 1 else 1
        if width == 1:
            flat = np.bincount(idx, weights=g.reshape(-1), minlength=av.shape[0])
            return flat.reshape(av.shape)
        comp = (idx[:, None] * width + np.arange(width)).ravel()
        out = np.bincount(comp, weights=g.reshape(-1), minlength=av.shape[0] * width)
        return out.reshape(av.shape)

    return _make(av[idx], (a, back))


def select_rc(a, rows, cols):
    """Pick ``a[rows[k], cols[k]]`` for each k (class-probability lookup)."""
    av = value_of(a)
    rows = np.asarray(rows)
    cols = np.asarray(cols)

    def back(g):
        out = np.zeros_like(av)
        np.add.at(out, (rows, cols), g)
        return out

    return _make(av[rows, cols], (a, back))


def reduce_sum(a, axis=None, keepdims: bool = False):
    av = value_of(a)

    def back(g):
        if axis is None:
            return np.broadcast_to(g, av.shape).copy()
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, av.shape).copy()

    return _make(av.sum(axis=axis, keepdims=keepdims), (a, back))


def reduce_mean(a, axis=None, keepdims: bool = False):
    av = value_of(a)
    if axis is None:
        denom = av.size
    else:
        denom = av.shape[axis]
    return scale(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / denom)


def stop_gradient(a):
    """Detach: the value flows forward, no gradient flows back."""
    return value_of(a).copy()


# ---------------------------------------------------------------------------
# Dense linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b):
    av, bv = value_of(a), value_of(b)
    return _make(av @ bv,
                 (a, lambda g: g @ bv.T),
                 (b, lambda g: av.T @ g))


# ---------------------------------------------------------------------------
# Segment reductions over CSR-sorted arcs
# ---------------------------------------------------------------------------

def _reduceat_sum(values: np.ndarray, indptr: np.ndarray, nseg: int) -> np.ndarray:
    """Segment sums for values already sorted by segment id.

    ``np.add.reduceat`` mishandles empty segments, so reduce only over the
    nonempty starts; consecutive nonempty starts are exactly the segment
    boundaries because empty segments contribute no rows in between.
    """
    out = np.zeros((nseg,) + values.shape[1:], dtype=np.float64)
    if values.shape[0] == 0:
        return out
    starts = indptr[:-1]
    nonempty = indptr[1:] > starts
    if not nonempty.any():
        return out
    out[nonempty] = np.add.reduceat(values, starts[nonempty], axis=0)
    return out


def segment_sum(v, seg_ids, indptr, nseg: int):
    """Sum rows of ``v`` grouped by the sorted ``seg_ids``.

    Summation runs in storage order within each segment, so results are
    reproducible bit-for-bit across runs.
    """
    vv = value_of(v)
    seg_ids = np.asarray(seg_ids)
    indptr = np.asarray(indptr)
    return _make(_reduceat_sum(vv, indptr, nseg), (v, lambda g: g[seg_ids]))


def segment_weighted_sum(w, v, seg_ids, indptr, nseg: int):
    """Fused ``out[n] = sum_{k in segment n} w[k] * v[k]``.

    ``w`` has shape (A,); ``v`` has shape (A, ...).  Retains only the output
    rather than the (A, ...) product, which matters on the per-arc hot path.
    """
    wv, vv = value_of(w), value_of(v)
    seg_ids = np.asarray(seg_ids)
    indptr = np.asarray(indptr)
    wb = wv.reshape(wv.shape + (1,) * (vv.ndim - 1))
    out = _reduceat_sum(wb * vv, indptr, nseg)
    tail_axes = tuple(range(1, vv.ndim))

    def back_w(g):
        return (g[seg_ids] * vv).sum(axis=tail_axes)

    def back_v(g):
        return wb * g[seg_ids]

    return _make(out, (w, back_w), (v, back_v))


def segment_max_values(values: np.ndarray, indptr: np.ndarray, nseg: int) -> np.ndarray:
    """Per-segment maxima of a plain array (used under stop-gradient).

    Empty segments report 0; callers never consume those entries because no
    arc maps back to an empty segment.
    """
    values = np.asarray(values, dtype=np.float64)
    out = np.zeros(nseg, dtype=np.float64)
    if values.shape[0] == 0:
        return out
    starts = indptr[:-1]
    nonempty = indptr[1:] > starts
    if nonempty.any():
        out[nonempty] = np.maximum.reduceat(values, starts[nonempty])
    return out


# ---------------------------------------------------------------------------
# Complex kernels (trailing-2 convention)
# ---------------------------------------------------------------------------

def cstack(re, im):
    """Assemble a complex trailing-2 array from real and imaginary parts."""
    rv, iv = value_of(re), value_of(im)
    return _make(np.stack([rv, iv], axis=-1),
                 (re, lambda g: g[..., 0]),
                 (im, lambda g: g[..., 1]))


def creal(a):
    av = value_of(a)

    def back(g):
        out = np.zeros(av.shape, dtype=np.float64)
        out[..., 0] = g
        return out

    return _make(av[..., 0].copy(), (a, back))


def cimag(a):
    av = value_of(a)

    def back(g):
        out = np.zeros(av.shape, dtype=np.float64)
        out[..., 1] = g
        return out

    return _make(av[..., 1].copy(), (a, back))


def conj(a):
    av = value_of(a)
    flip = np.array([1.0, -1.0])
    return _make(av * flip, (a, lambda g: g * flip))


def _cmul_values(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.empty(np.broadcast_shapes(a.shape, b.shape), dtype=np.float64)
    out[..., 0] = a[..., 0] * b[..., 0] - a[..., 1] * b[..., 1]
    out[..., 1] = a[..., 0] * b[..., 1] + a[..., 1] * b[..., 0]
    return out


def _cmul_conj_values(g: np.ndarray, b: np.ndarray) -> np.ndarray:
    """g * conj(b) on trailing-2 arrays (the complex-product adjoint)."""
    out = np.empty(np.broadcast_shapes(g.shape, b.shape), dtype=np.float64)
    out[..., 0] = g[..., 0] * b[..., 0] + g[..., 1] * b[..., 1]
    out[..., 1] = g[..., 1] * b[..., 0] - g[..., 0] * b[..., 1]
    return out


def cmul(a, b):
    """Elementwise complex product with leading-axis broadcasting."""
    av, bv = value_of(a), value_of(b)
    return _make(_cmul_values(av, bv),
                 (a, lambda g: _unbroadcast(_cmul_conj_values(g, bv), av.shape)),
                 (b, lambda g: _unbroadcast(_cmul_conj_values(g, av), bv.shape)))


def cmatmul(x, w):
    """Complex matrix product of (n, di, 2) by (di, do, 2) -> (n, do, 2)."""
    xv, wv = value_of(x), value_of(w)
    xr, xi = xv[..., 0], xv[..., 1]
    wr, wi = wv[..., 0], wv[..., 1]
    out = np.empty(xr.shape[:-1] + (wr.shape[-1], 2))
    out[..., 0] = xr @ wr
    out[..., 0] -= xi @ wi
    out[..., 1] = xr @ wi
    out[..., 1] += xi @ wr

    def back_x(g):
        gr, gi = g[..., 0], g[..., 1]
        gx = np.empty(xv.shape)
        gx[..., 0] = gr @ wr.T
        gx[..., 0] += gi @ wi.T
        gx[..., 1] = gi @ wr.T
        gx[..., 1] -= gr @ wi.T
        return gx

    def back_w(g):
        gr, gi = g[..., 0], g[..., 1]
        gw = np.empty(wv.shape)
        gw[..., 0] = xr.T @ gr
        gw[..., 0] += xi.T @ gi
        gw[..., 1] = xr.T @ gi
        gw[..., 1] -= xi.T @ gr
        return gw

    return _make(out, (x, back_x), (w, back_w))


def cinner(u, v):
    """Row-wise conjugate inner product of (..., d, 2) arrays -> (..., 2).

    Conjugate-linear in ``u``: out = sum_d conj(u) * v over the d axis.
    """
    uv, vv = value_of(u), value_of(v)
    ur, ui = uv[..., 0], uv[..., 1]
    vr, vi = vv[..., 0], vv[..., 1]
    out = np.empty(uv.shape[:-2] + (2,))
    out[..., 0] = np.einsum("...ij,...ij->...", uv, vv)
    out[..., 1] = np.einsum("...i,...i->...", ur, vi)
    out[..., 1] -= np.einsum("...i,...i->...", ui, vr)

    def back_u(g):
        gr = g[..., 0][..., None]
        gi = g[..., 1][..., None]
        gu = np.empty(uv.shape)
        gu[..., 0] = gr * vr
        gu[..., 0] += gi * vi
        gu[..., 1] = gr * vi
        gu[..., 1] -= gi * vr
        return gu

    def back_v(g):
        gr = g[..., 0][..., None]
        gi = g[..., 1][..., None]
        gv = np.empty(vv.shape)
        gv[..., 0] = gr * ur
        gv[..., 0] -= gi * ui
        gv[..., 1] = gr * ui
        gv[..., 1] += gi * ur
        return gv

    return _make(out, (u, back_u), (v, back_v))


def crotate(x, theta):
    """Per-row (or per-element) phase rotation ``y = e^{i theta} x``.

    ``x`` has shape (..., d, 2); ``theta`` has shape x.shape[:-2] (one phase
    per row) or any shape broadcastable to x.shape[:-1] (per element).
    """
    xv, tv = value_of(x), value_of(theta)
    if tv.shape == xv.shape[:-2]:
        tb = tv[..., None]
    else:
        try:
            ok = np.broadcast_shapes(tv.shape, xv.shape[:-1]) == xv.shape[:-1]
        except ValueError:
            ok = False
        if not ok:
            raise ValueError(f"theta shape {tv.shape} incompatible with x shape {xv.shape}")
        tb = tv
    c, s = np.cos(tb), np.sin(tb)
    xr, xi = xv[..., 0], xv[..., 1]
    yr = c * xr - s * xi
    yi = s * xr + c * xi
    out = np.empty(np.broadcast_shapes(yr.shape, yi.shape) + (2,))
    out[..., 0] = yr
    out[..., 1] = yi

    def back_x(g):
        gr, gi = g[..., 0], g[..., 1]
        gx = np.empty(xv.shape)
        gx[..., 0] = c * gr
        gx[..., 0] += s * gi
        gx[..., 1] = c * gi
        gx[..., 1] -= s * gr
        return gx

    def back_theta(g):
        # dL/dtheta = g_re * dy_re/dtheta + g_im * dy_im/dtheta
        #           = g_re * (-y_im) + g_im * (y_re), summed over broadcast axes
        t = g[..., 1] * yr - g[..., 0] * yi
        return _unbroadcast(t, tb.shape).reshape(tv.shape)

    return _make(out, (x, back_x), (theta, back_theta))


def csqnorm(x):
    """Squared norm over the last two axes: sum of re^2 + im^2 per row."""
    xv = value_of(x)
    out = np.einsum("...ij,...ij->...", xv, xv)
    return _make(out, (x, lambda g: 2.0 * g[..., None, None] * xv))


def cabs(x):
    """Per-element complex magnitude of a trailing-2 array.

    Zero entries get zero gradient (subgradient choice at the cone point).
    """
    xv = value_of(x)
    out = np.sqrt(np.einsum("...i,...i->...", xv, xv))

    def back(g):
        denom = np.where(out > 0.0, out, 1.0)
        return (g / denom)[..., None] * xv

    return _make(out, (x, back))


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------

def _topological_order(root: Var) -> list[Var]:
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._backs:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Var, seed: np.ndarray | float = 1.0) -> None:
    """Accumulate gradients of ``root`` into every reachable leaf ``Var``.

    Interior node gradients and closures are released as the walk passes
    them, so peak memory decays during the sweep.
    """
    if not isinstance(root, Var):
        raise TypeError("backward expects a Var root")
    order = _topological_order(root)
    root.grad = np.broadcast_to(np.asarray(seed, dtype=np.float64), root.shape).copy()
    for node in reversed(order):
        g = node.grad
        if g is None:
            continue
        backs = node._backs
        if not backs:
            continue  # leaf: keep accumulated gradient
        for parent, vjp in backs:
            contrib = vjp(g)
            if parent.grad is None:
                parent.grad = contrib
            else:
                parent.grad = parent.grad + contrib
        node._backs = ()
        node.grad = None


class GradientTape:
    """One recorded forward pass: a scalar loss root plus named leaves.

    ``gradients()`` may be called exactly once; the backward sweep consumes
    the recorded graph.
    """

    def __init__(self, loss: Var, leaves: dict[str, Var]):
        if not isinstance(loss, Var):
            raise TypeError("loss must be a Var (did every input stay constant?)")
        if loss.shape != ():
            raise ValueError(f"loss must be scalar, got shape {loss.shape}")
        self._loss = loss
        self._leaves = leaves
        self._consumed = False

    @property
    def loss_value(self) -> float:
        return float(self._loss.value)

    def gradients(self) -> dict[str, np.ndarray]:
        if self._consumed:
            raise RuntimeError("gradient tape already consumed")
        self._consumed = True
        backward(self._loss)
        out = {}
        for name, leaf in self._leaves.items():
            if leaf.grad is None:
                out[name] = np.zeros_like(leaf.value)
            else:
                out[name] = leaf.grad
        self._loss = None  # type: ignore[assignment]
        return out
