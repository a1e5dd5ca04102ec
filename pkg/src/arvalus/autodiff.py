"""Minimal reverse-mode differentiation over numpy arrays.

Provides exactly the differentiable operations the classifiers need. Ops
are methods on a Tape; each records a backward rule, and Tape.backward
replays the records in reverse execution order. Everything runs in double
precision. A finite-difference harness lives at the bottom for use as an
independent gradient oracle.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pure-numpy fallback below
    HAVE_NUMBA = False


class Tensor:
    """A value in the computation, with an optional gradient slot."""

    __slots__ = ("values", "requires_grad", "grad")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def item(self) -> float:
        return float(self.values)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


if HAVE_NUMBA:

    @njit(parallel=True, cache=True)
    def _elu_pool_norm_fwd(x, eps):  # pragma: no cover - measured via the op
        N, D, L = x.shape
        y = np.empty((N, D, L))
        winners = np.empty((N, D, L), dtype=np.int8)
        inv = np.empty(N)
        mean = np.empty(N)
        for n in prange(N):
            e = np.empty(L)
            s = 0.0
            s2 = 0.0
            for d in range(D):
                for t in range(L):
                    v = x[n, d, t]
                    e[t] = v if v > 0.0 else math.expm1(v)
                for t in range(L):
                    if t >= 1:
                        best = e[t - 1]
                        win = 0
                        if e[t] > best:
                            best = e[t]
                            win = 1
                    else:
                        best = e[t]
                        win = 1
                    if t + 1 < L and e[t + 1] > best:
                        best = e[t + 1]
                        win = 2
                    y[n, d, t] = best
                    winners[n, d, t] = win
                    s += best
                    s2 += best * best
            m = s / (D * L)
            var = s2 / (D * L) - m * m
            if var < 0.0:
                var = 0.0
            iv = 1.0 / math.sqrt(var + eps)
            inv[n] = iv
            mean[n] = m
            for d in range(D):
                for t in range(L):
                    y[n, d, t] = (y[n, d, t] - m) * iv
        return y, winners, inv

    @njit(parallel=True, cache=True)
    def _column_max_fwd(a):  # pragma: no cover - measured via the op
        N, D, F = a.shape
        y = np.empty((N, F))
        winners = np.empty((N, F), dtype=np.int64)
        for n in prange(N):
            for f in range(F):
                best = a[n, 0, f]
                win = 0
                for d in range(1, D):
                    if a[n, d, f] > best:
                        best = a[n, d, f]
                        win = d
                y[n, f] = best
                winners[n, f] = win
        return y, winners

    @njit(parallel=True, cache=True)
    def _column_max_bwd(winners, g, D):  # pragma: no cover
        N, F = g.shape
        ga = np.zeros((N, D, F))
        for n in prange(N):
            for f in range(F):
                ga[n, winners[n, f], f] = g[n, f]
        return ga

    @njit(parallel=True, cache=True)
    def _elu_pool_norm_bwd(x, y, winners, inv, gy):  # pragma: no cover
        N, D, L = x.shape
        gx = np.zeros((N, D, L))
        for n in prange(N):
            gsum = 0.0
            gysum = 0.0
            for d in range(D):
                for t in range(L):
                    gsum += gy[n, d, t]
                    gysum += gy[n, d, t] * y[n, d, t]
            gm = gsum / (D * L)
            gym = gysum / (D * L)
            iv = inv[n]
            for d in range(D):
                for t in range(L):
                    gp = iv * (gy[n, d, t] - gm - y[n, d, t] * gym)
                    src = t + winners[n, d, t] - 1
                    v = x[n, d, src]
                    der = 1.0 if v > 0.0 else math.expm1(v) + 1.0
                    gx[n, d, src] += gp * der
        return gx


def _conv_matrix(filters: list, length: int) -> np.ndarray:
    """Banded (L, k*L) matrix computing k same-padded cross-correlations."""
    K = np.zeros((length, len(filters) * length))
    for f, w in enumerate(filters):
        m = w.shape[0]
        if m % 2 == 0:
            raise ValueError(f"filter length must be odd, got {m}")
        c = m // 2
        for v in range(m):
            off = v - c
            cols = np.arange(max(0, -off), min(length, length - off))
            K[cols + off, f * length + cols] = w.values[v]
    return K


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tape:
    """Ordered record of executed ops; consumed by a single backward pass."""

    def __init__(self, record: bool = True):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], object]] = []
        self._recording = record
        self._consumed = False

    def _emit(self, out: Tensor, inputs: tuple[Tensor, ...], backward) -> Tensor:
        if self._recording and out.requires_grad:
            self._records.append((out, inputs, backward))
        return out

    # -- elementwise arithmetic -------------------------------------------

    def add(self, a, b) -> Tensor:
        a, b = _as_tensor(a), _as_tensor(b)
        out = Tensor(a.values + b.values, a.requires_grad or b.requires_grad)

        def backward(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return self._emit(out, (a, b), backward)

    def sub(self, a, b) -> Tensor:
        a, b = _as_tensor(a), _as_tensor(b)
        out = Tensor(a.values - b.values, a.requires_grad or b.requires_grad)

        def backward(g):
            return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

        return self._emit(out, (a, b), backward)

    def mul(self, a, b) -> Tensor:
        a, b = _as_tensor(a), _as_tensor(b)
        out = Tensor(a.values * b.values, a.requires_grad or b.requires_grad)

        def backward(g):
            return _unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)

        return self._emit(out, (a, b), backward)

    def neg(self, a) -> Tensor:
        a = _as_tensor(a)
        out = Tensor(-a.values, a.requires_grad)
        return self._emit(out, (a,), lambda g: (-g,))

    def log(self, a) -> Tensor:
        a = _as_tensor(a)
        out = Tensor(np.log(a.values), a.requires_grad)
        return self._emit(out, (a,), lambda g: (g / a.values,))

    def power(self, a, exponent: float) -> Tensor:
        """Elementwise a**exponent for a constant exponent."""
        a = _as_tensor(a)
        out = Tensor(a.values ** exponent, a.requires_grad)

        def backward(g):
            if exponent == 0:
                return (np.zeros_like(g),)
            return (g * exponent * a.values ** (exponent - 1),)

        return self._emit(out, (a,), backward)

    def clip_min(self, a, floor: float) -> Tensor:
        """max(a, floor); gradient passes only where a exceeded the floor."""
        a = _as_tensor(a)
        out = Tensor(np.maximum(a.values, floor), a.requires_grad)
        passed = a.values > floor
        return self._emit(out, (a,), lambda g: (g * passed,))

    # -- reductions --------------------------------------------------------

    def sum(self, a, axis=None) -> Tensor:
        a = _as_tensor(a)
        out = Tensor(a.values.sum(axis=axis), a.requires_grad)

        def backward(g):
            if axis is None:
                return (np.full(a.shape, g),)
            return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

        return self._emit(out, (a,), backward)

    def mean(self, a, axis=None) -> Tensor:
        a = _as_tensor(a)
        out = Tensor(a.values.mean(axis=axis), a.requires_grad)
        count = a.values.size if axis is None else a.shape[axis]

        def backward(g):
            if axis is None:
                return (np.full(a.shape, g / count),)
            return (np.broadcast_to(np.expand_dims(g / count, axis), a.shape).copy(),)

        return self._emit(out, (a,), backward)

    def column_max(self, a, axis: int = 0) -> Tensor:
        """Max-reduce one axis; the gradient goes to the first argmax on ties."""
        a = _as_tensor(a)
        if a.shape[axis] < 1:
            raise ValueError("cannot reduce an empty axis")
        if HAVE_NUMBA and a.values.ndim == 3 and axis in (-2, 1):
            y, winners = _column_max_fwd(np.ascontiguousarray(a.values))
            out = Tensor(y, a.requires_grad)

            def backward(g):
                return (_column_max_bwd(winners, np.ascontiguousarray(g), a.shape[1]),)

            return self._emit(out, (a,), backward)
        winners = np.argmax(a.values, axis=axis)
        out = Tensor(np.take_along_axis(a.values, np.expand_dims(winners, axis), axis).squeeze(axis),
                     a.requires_grad)

        def backward(g):
            ga = np.zeros(a.shape)
            np.put_along_axis(ga, np.expand_dims(winners, axis), np.expand_dims(g, axis), axis)
            return (ga,)

        return self._emit(out, (a,), backward)

    # -- shape plumbing ----------------------------------------------------

    def reshape(self, a, shape) -> Tensor:
        a = _as_tensor(a)
        out = Tensor(a.values.reshape(shape), a.requires_grad)
        return self._emit(out, (a,), lambda g: (g.reshape(a.shape),))

    def concat(self, tensors, axis: int = 0) -> Tensor:
        tensors = [_as_tensor(t) for t in tensors]
        out = Tensor(np.concatenate([t.values for t in tensors], axis=axis),
                     any(t.requires_grad for t in tensors))
        sizes = [t.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]

        def backward(g):
            return tuple(np.split(g, splits, axis=axis))

        return self._emit(out, tuple(tensors), backward)

    def slice_vec(self, a, start: int, stop: int) -> Tensor:
        """Contiguous slice of a 1-D tensor."""
        a = _as_tensor(a)
        out = Tensor(a.values[start:stop], a.requires_grad)

        def backward(g):
            ga = np.zeros(a.shape)
            ga[start:stop] = g
            return (ga,)

        return self._emit(out, (a,), backward)

    def gather(self, a, indices, axis: int = 0) -> Tensor:
        """Select rows along an axis by an integer index array."""
        a = _as_tensor(a)
        indices = np.asarray(indices, dtype=np.int64)
        out = Tensor(np.take(a.values, indices, axis=axis), a.requires_grad)
        size = a.shape[axis]

        def backward(g):
            if axis == 1 and g.ndim == 3:
                # scatter-add as a GEMM: much faster than np.add.at
                onehot = np.zeros((size, indices.size))
                onehot[indices, np.arange(indices.size)] = 1.0
                return (np.matmul(onehot, g),)
            ga = np.zeros(a.shape)
            mover = np.moveaxis(ga, axis, 0)
            np.add.at(mover, indices, np.moveaxis(g, axis, 0))
            return (ga,)

        return self._emit(out, (a,), backward)

    def take_per_row(self, a, indices) -> Tensor:
        """Pick one column per row of a 2-D tensor: out[r] = a[r, indices[r]]."""
        a = _as_tensor(a)
        indices = np.asarray(indices, dtype=np.int64)
        rows = np.arange(a.shape[0])
        out = Tensor(a.values[rows, indices], a.requires_grad)

        def backward(g):
            ga = np.zeros(a.shape)
            np.add.at(ga, (rows, indices), g)
            return (ga,)

        return self._emit(out, (a,), backward)

    # -- linear algebra ----------------------------------------------------

    def matmul(self, a, b) -> Tensor:
        """Matrix product; batch dimensions, when present, must match exactly."""
        a, b = _as_tensor(a), _as_tensor(b)
        if a.values.ndim < 2 or b.values.ndim < 2:
            raise ValueError("matmul operands must be at least 2-D")
        if a.values.ndim != b.values.ndim and b.values.ndim != 2:
            raise ValueError(f"unsupported matmul ranks {a.shape} @ {b.shape}")
        out = Tensor(np.matmul(a.values, b.values), a.requires_grad or b.requires_grad)

        def backward(g):
            ga = np.matmul(g, b.values.swapaxes(-1, -2))
            gb = np.matmul(a.values.swapaxes(-1, -2), g)
            if gb.ndim > b.values.ndim:  # b broadcast over a's batch dims
                gb = gb.sum(axis=tuple(range(gb.ndim - b.values.ndim)))
            return ga, gb

        return self._emit(out, (a, b), backward)

    def linear(self, x, weight, bias=None) -> Tensor:
        """Affine map on the last axis: y = x @ weight.T (+ bias).

        weight has shape (out_features, in_features); bias, when given,
        has shape (out_features,).
        """
        x, weight = _as_tensor(x), _as_tensor(weight)
        if x.shape[-1] != weight.shape[1]:
            raise ValueError(f"linear shape mismatch: {x.shape} vs weight {weight.shape}")
        lead = x.shape[:-1]
        flat = self.reshape(x, (-1, x.shape[-1]))
        wt = self.transpose2d(weight)
        y = self.matmul(flat, wt)
        if bias is not None:
            y = self.add(y, _as_tensor(bias))
        return self.reshape(y, lead + (weight.shape[0],))

    def transpose2d(self, a) -> Tensor:
        a = _as_tensor(a)
        out = Tensor(a.values.T, a.requires_grad)
        return self._emit(out, (a,), lambda g: (g.T,))

    # -- network operations --------------------------------------------

    def conv1d_same(self, x, weight) -> Tensor:
        """Zero-padded same-length cross-correlation of each row of x.

        x has shape (rows, L); weight is a flat odd-length filter applied
        independently to every row, with no bias.
        """
        x, weight = _as_tensor(x), _as_tensor(weight)
        m = weight.shape[0]
        if m % 2 == 0:
            raise ValueError(f"filter length must be odd, got {m}")
        L = x.shape[-1]
        c = m // 2
        y = np.zeros_like(x.values)
        for u in range(m):
            off = u - c
            if off >= 0:
                y[..., : L - off] += weight.values[u] * x.values[..., off:]
            else:
                y[..., -off:] += weight.values[u] * x.values[..., :off]
        out = Tensor(y, x.requires_grad or weight.requires_grad)

        def backward(g):
            gx = np.zeros(x.shape)
            gw = np.zeros(weight.shape)
            for u in range(m):
                off = u - c
                if off >= 0:
                    gx[..., off:] += weight.values[u] * g[..., : L - off]
                    gw[u] = np.sum(g[..., : L - off] * x.values[..., off:])
                else:
                    gx[..., :off] += weight.values[u] * g[..., -off:]
                    gw[u] = np.sum(g[..., -off:] * x.values[..., :off])
            return gx, gw

        return self._emit(out, (x, weight), backward)

    def block_conv1d_same(self, x, block_filters: list, blocks: list) -> Tensor:
        """Per-block multi-filter convolution as banded matrix products.

        x is (rows, L); blocks partitions the rows into contiguous
        [lo, hi) slices, each convolved with its own filter set. The
        filters' outputs are laid side by side, so the result is
        (rows, n_filters * L) — equivalent to conv1d_same per filter plus
        a concat, but it runs as one GEMM per block.
        """
        x = _as_tensor(x)
        block_filters = [[_as_tensor(w) for w in filters] for filters in block_filters]
        L = x.shape[-1]
        k = len(block_filters[0])
        mats = [_conv_matrix(filters, L) for filters in block_filters]
        y = np.empty(x.shape[:-1] + (k * L,))
        for (lo, hi), K in zip(blocks, mats):
            np.matmul(x.values[lo:hi], K, out=y[lo:hi])
        flat = [w for filters in block_filters for w in filters]
        out = Tensor(y, x.requires_grad or any(w.requires_grad for w in flat))

        def backward(g):
            gx = np.empty(x.shape) if x.requires_grad else None
            grads = []
            for (lo, hi), K, filters in zip(blocks, mats, block_filters):
                if gx is not None:
                    np.matmul(g[lo:hi], K.T, out=gx[lo:hi])
                gk = np.matmul(x.values[lo:hi].T, g[lo:hi])  # (L, k*L)
                for f, w in enumerate(filters):
                    m = w.shape[0]
                    c = m // 2
                    band = gk[:, f * L : (f + 1) * L]
                    grads.append(np.array([np.trace(band, offset=-(v - c)) for v in range(m)]))
            return (gx, *grads)

        return self._emit(out, (x, *flat), backward)

    def block_linear(self, x, weights: list, blocks: list) -> Tensor:
        """Per-block affine map y[lo:hi] = x[lo:hi] @ W_b.T, no bias.

        All weight matrices share the (out, in) shape; blocks partitions
        the rows of x.
        """
        x = _as_tensor(x)
        weights = [_as_tensor(w) for w in weights]
        out_dim = weights[0].shape[0]
        y = np.empty(x.shape[:-1] + (out_dim,))
        for (lo, hi), w in zip(blocks, weights):
            np.matmul(x.values[lo:hi], w.values.T, out=y[lo:hi])
        out = Tensor(y, x.requires_grad or any(w.requires_grad for w in weights))

        def backward(g):
            gx = np.empty(x.shape) if x.requires_grad else None
            grads = []
            for (lo, hi), w in zip(blocks, weights):
                if gx is not None:
                    np.matmul(g[lo:hi], w.values, out=gx[lo:hi])
                grads.append(np.matmul(g[lo:hi].T, x.values[lo:hi]))
            return (gx, *grads)

        return self._emit(out, (x, *weights), backward)

    def transpose(self, a, axes) -> Tensor:
        a = _as_tensor(a)
        out = Tensor(np.ascontiguousarray(np.transpose(a.values, axes)), a.requires_grad)
        inverse = tuple(np.argsort(axes))
        return self._emit(out, (a,), lambda g: (np.transpose(g, inverse),))

    def elu(self, x) -> Tensor:
        x = _as_tensor(x)
        y = np.where(x.values > 0, x.values, np.expm1(x.values))
        out = Tensor(y, x.requires_grad)

        def backward(g):
            return (g * np.where(x.values > 0, 1.0, y + 1.0),)

        return self._emit(out, (x,), backward)

    def maxpool1d_same(self, x, window: int = 3) -> Tensor:
        """Same-length sliding max over the last axis, edges padded by -inf."""
        x = _as_tensor(x)
        if window % 2 == 0:
            raise ValueError(f"pool window must be odd, got {window}")
        c = window // 2
        L = x.shape[-1]

        def shifted(u):
            off = u - c
            cand = np.full(x.shape, -np.inf)
            if off >= 0:
                cand[..., : L - off] = x.values[..., off:]
            else:
                cand[..., -off:] = x.values[..., :off]
            return cand

        y = shifted(0)
        winners = np.zeros(x.shape, dtype=np.int8)
        for u in range(1, window):
            cand = shifted(u)
            better = cand > y  # strict: the first window position wins ties
            np.copyto(y, cand, where=better)
            winners[better] = u
        out = Tensor(y, x.requires_grad)

        def backward(g):
            gx = np.zeros(x.shape)
            for u in range(window):
                off = u - c
                mask = (winners == u) * g
                if off >= 0:
                    gx[..., off:] += mask[..., : L - off]
                else:
                    gx[..., :off] += mask[..., -off:]
            return (gx,)

        return self._emit(out, (x,), backward)

    def elu_pool_matnorm(self, x, eps: float = 1e-5) -> Tensor:
        """ELU, maxpool1d_same(3) per row, instance norm per (d, L) slab.

        x has shape (samples, d, L): pooling runs along each length-L row,
        the normalization covers all d rows of a sample jointly so rows
        keep their relative scales. Semantically identical to composing
        elu / maxpool1d_same / instance_norm(axis=(-2, -1)); fused into
        one pass per direction when numba is available.
        """
        x = _as_tensor(x)
        if x.values.ndim != 3:
            raise ValueError("elu_pool_matnorm expects (samples, rows, length)")
        if not HAVE_NUMBA:
            return self.instance_norm(self.maxpool1d_same(self.elu(x), window=3),
                                      axis=(-2, -1), eps=eps)
        vals = np.ascontiguousarray(x.values)
        y, winners, inv = _elu_pool_norm_fwd(vals, eps)
        out = Tensor(y, x.requires_grad)

        def backward(g):
            return (_elu_pool_norm_bwd(vals, y, winners, inv, np.ascontiguousarray(g)),)

        return self._emit(out, (x,), backward)

    def instance_norm(self, x, axis, eps: float = 1e-5) -> Tensor:
        """Normalize axes to zero mean and unit variance, no affine."""
        x = _as_tensor(x)
        for ax in (axis if isinstance(axis, tuple) else (axis,)):
            if x.shape[ax] < 1:
                raise ValueError("cannot normalize an empty axis")
        mean = x.values.mean(axis=axis, keepdims=True)
        var = x.values.var(axis=axis, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        y = (x.values - mean) * inv
        out = Tensor(y, x.requires_grad)

        def backward(g):
            gm = g.mean(axis=axis, keepdims=True)
            gym = (g * y).mean(axis=axis, keepdims=True)
            return (inv * (g - gm - y * gym),)

        return self._emit(out, (x,), backward)

    def dropout(self, x, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
        """Inverted dropout: survivors scaled by 1/(1-p); identity at inference."""
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        x = _as_tensor(x)
        if not training or p == 0.0:
            return x
        if rng is None:
            raise ValueError("training-mode dropout needs a random generator")
        draw = rng.random(x.shape, dtype=np.float32)  # mask only; f32 draw is cheaper
        keep = np.where(draw >= p, np.float32(1.0 / (1.0 - p)), np.float32(0.0))
        out = Tensor(x.values * keep, x.requires_grad)
        return self._emit(out, (x,), lambda g: (g * keep,))

    def softmax(self, x, axis: int = -1) -> Tensor:
        """Exp-normalize along an axis, stabilized by max subtraction.

        Entries of -inf are treated as masked and produce exact zeros.
        """
        x = _as_tensor(x)
        shifted = x.values - np.max(x.values, axis=axis, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=axis, keepdims=True)
        out = Tensor(y, x.requires_grad)

        def backward(g):
            dot = (g * y).sum(axis=axis, keepdims=True)
            return (y * (g - dot),)

        return self._emit(out, (x,), backward)

    def scatter_edges(self, scores, src, dst, n_nodes: int, fill: float = -np.inf) -> Tensor:
        """Place per-edge scores into dense (..., n, n) matrices.

        Non-edge entries take `fill` (default -inf so a following softmax
        assigns them exactly zero weight).
        """
        scores = _as_tensor(scores)
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        lead = scores.shape[:-1]
        dense = np.full(lead + (n_nodes, n_nodes), fill)
        dense[..., src, dst] = scores.values
        out = Tensor(dense, scores.requires_grad)

        def backward(g):
            return (g[..., src, dst],)

        return self._emit(out, (scores,), backward)

    # -- the reverse pass ----------------------------------------------

    def backward(self, loss: Tensor) -> None:
        """Populate gradients of every tensor the scalar loss depends on."""
        if self._consumed:
            raise RuntimeError("tape already consumed; rebuild the forward pass")
        if not self._recording:
            raise RuntimeError("tape was created with record=False")
        if loss.values.size != 1:
            raise ValueError(f"backward root must be scalar, got shape {loss.shape}")
        self._consumed = True
        loss.grad = np.ones_like(loss.values)
        for out, inputs, rule in reversed(self._records):
            if out.grad is None:
                continue
            grads = rule(out.grad)
            for tensor, grad in zip(inputs, grads):
                if grad is None or not tensor.requires_grad:
                    continue
                if tensor.grad is None:
                    tensor.grad = grad.reshape(tensor.shape) if grad.shape != tensor.values.shape else grad
                else:
                    tensor.grad = tensor.grad + grad


# ---------------------------------------------------------------------------
# Optimizer.


@dataclass
class AdamState:
    """First/second moment estimates and the shared step counter."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params: dict) -> "AdamState":
        return cls(
            m={k: np.zeros(p.shape) for k, p in params.items()},
            v={k: np.zeros(p.shape) for k, p in params.items()},
            step=0,
        )


def adam_step(
    params: dict,
    grads: dict,
    state: AdamState,
    lr: float = 1e-2,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 1e-5,
) -> None:
    """One Adam update in place; weight decay enters as an L2 gradient term."""
    state.step += 1
    t = state.step
    for name, param in params.items():
        g = grads.get(name)
        g = np.zeros(param.shape) if g is None else np.asarray(g)
        if g.shape != param.values.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {param.values.shape} for {name}")
        if weight_decay:
            g = g + weight_decay * param.values
        m = state.m[name]
        v = state.v[name]
        if m.shape != param.values.shape:
            raise ValueError(f"optimizer state shape mismatch for {name}")
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        param.values -= lr * m_hat / (np.sqrt(v_hat) + eps)


# ---------------------------------------------------------------------------
# Checkpoint format: one JSON header line plus raw little-endian float64
# payloads concatenated in header order. Byte-exact round trips, no
# timestamps, so identical states produce identical files.

_CKPT_MAGIC = "ARVALUS-CKPT-1"


def save_checkpoint(path: str | Path, tensors: dict, meta: dict | None = None) -> None:
    names = list(tensors)
    header = {
        "meta": meta or {},
        "tensors": {k: list(np.asarray(tensors[k]).shape) for k in names},
    }
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC.encode() + b"\n")
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for k in names:
            arr = np.ascontiguousarray(np.asarray(tensors[k], dtype=np.float64))
            fh.write(arr.tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict, dict]:
    with open(path, "rb") as fh:
        magic = fh.readline().strip().decode()
        if magic != _CKPT_MAGIC:
            raise ValueError(f"not a checkpoint file: {path}")
        header = json.loads(fh.readline().decode())
        tensors = {}
        for name, shape in header["tensors"].items():
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            tensors[name] = np.frombuffer(buf, dtype=np.float64).reshape(shape).copy()
    return tensors, header.get("meta", {})


# ---------------------------------------------------------------------------
# Independent gradient oracle.


def finite_difference_gradient(fn, arrays: list, step: float = 1e-5) -> list:
    """Central-difference gradients of a scalar function of numpy arrays."""
    grads = []
    for i, base in enumerate(arrays):
        base = np.asarray(base, dtype=np.float64)
        grad = np.zeros_like(base)
        flat = grad.ravel()
        for j in range(base.size):
            bumped = [a.copy() for a in arrays]
            bumped[i].ravel()[j] += step
            hi = fn(bumped)
            bumped = [a.copy() for a in arrays]
            bumped[i].ravel()[j] -= step
            lo = fn(bumped)
            flat[j] = (hi - lo) / (2 * step)
        grads.append(grad)
    return grads
