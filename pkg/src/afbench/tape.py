"""A small reverse-mode tape over numpy arrays.

Every primitive takes the tape first, computes its value eagerly and, when
recording, stores a closure mapping the upstream gradient to gradients of
its inputs. :meth:`Tape.backward` replays the records in reverse and
accumulates gradients additively, so a value used twice receives the sum
of both contributions.

Parameters are registered with :meth:`Tape.param`, keyed by array
identity, so reusing one weight matrix in several places (a recurrent
kernel, say) shares a single leaf.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy import sparse

from .errors import ShapeError


class Var:
    __slots__ = ("value", "requires_grad", "_id")

    def __init__(self, value, requires_grad, ident):
        self.value = value
        self.requires_grad = requires_grad
        self._id = ident

    @property
    def shape(self):
        return self.value.shape

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, requires_grad={self.requires_grad})"


class Tape:
    def __init__(self, record: bool = True):
        self.record = record
        self._count = 0
        self._records: list[tuple[Var, tuple[Var, ...], Callable]] = []
        self._params: dict[int, tuple[np.ndarray, Var]] = {}
        self._grads: dict[int, np.ndarray] = {}

    def _new(self, value, requires_grad) -> Var:
        self._count += 1
        return Var(value, requires_grad, self._count)

    def constant(self, value) -> Var:
        if isinstance(value, Var):
            return value
        return self._new(np.asarray(value, dtype=np.float64), False)

    def param(self, array: np.ndarray) -> Var:
        key = id(array)
        hit = self._params.get(key)
        if hit is not None:
            return hit[1]
        var = self._new(array, self.record)
        self._params[key] = (array, var)
        return var

    def op(self, value, parents: Sequence[Var], backward: Callable) -> Var:
        """Register a primitive result; ``backward(g)`` returns one grad per parent."""
        needs = self.record and any(p.requires_grad for p in parents)
        out = self._new(value, needs)
        if needs:
            self._records.append((out, tuple(parents), backward))
        return out

    def backward(self, root: Var, upstream=None) -> None:
        if not self.record:
            raise RuntimeError("tape was created with record=False")
        grads = self._grads
        grads.clear()
        seed = np.ones_like(root.value) if upstream is None else np.asarray(upstream, dtype=np.float64)
        if seed.shape != root.value.shape:
            raise ShapeError(f"upstream shape {seed.shape} != output shape {root.value.shape}")
        grads[root._id] = seed
        for out, parents, fn in reversed(self._records):
            g = grads.get(out._id)
            if g is None:
                continue
            for parent, pg in zip(parents, fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._id in grads:
                    grads[parent._id] = grads[parent._id] + pg
                else:
                    grads[parent._id] = pg

    def grad(self, array: np.ndarray) -> np.ndarray:
        """Gradient w.r.t. a registered parameter array (zeros if unused)."""
        hit = self._params.get(id(array))
        if hit is None:
            return np.zeros_like(array)
        g = self._grads.get(hit[1]._id)
        return np.zeros_like(array) if g is None else g

    def grad_of(self, var: Var):
        return self._grads.get(var._id)


def _v(tape: Tape, x) -> Var:
    return x if isinstance(x, Var) else tape.constant(x)


def _scatter_sum(index: np.ndarray, values: np.ndarray, n: int) -> np.ndarray:
    """Rows of ``values`` summed into ``n`` buckets by ``index``."""
    if len(index) == 0:
        return np.zeros((n,) + values.shape[1:])
    flat = values.reshape(len(index), -1)
    ones = np.ones(len(index))
    hit = sparse.csr_matrix((ones, (index, np.arange(len(index)))), shape=(n, len(index)))
    return np.asarray(hit @ flat).reshape((n,) + values.shape[1:])


# ---------------------------------------------------------------------------
# primitives


def add(tape, a, b) -> Var:
    a, b = _v(tape, a), _v(tape, b)
    if a.shape != b.shape:
        raise ShapeError(f"add: {a.shape} vs {b.shape}")
    return tape.op(a.value + b.value, (a, b), lambda g: (g, g))


def sub(tape, a, b) -> Var:
    a, b = _v(tape, a), _v(tape, b)
    if a.shape != b.shape:
        raise ShapeError(f"sub: {a.shape} vs {b.shape}")
    return tape.op(a.value - b.value, (a, b), lambda g: (g, -g))


def scale(tape, a, c: float) -> Var:
    a = _v(tape, a)
    return tape.op(a.value * c, (a,), lambda g: (g * c,))


def linear(tape, x, w, b=None) -> Var:
    """``x @ w + b`` with ``w`` of shape (in, out)."""
    x, w = _v(tape, x), _v(tape, w)
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input width {x.shape[-1]} != weight rows {w.shape[0]}")
    out = x.value @ w.value
    if b is None:
        return tape.op(out, (x, w), lambda g: (g @ w.value.T, x.value.T @ g))
    b = _v(tape, b)
    out = out + b.value
    return tape.op(out, (x, w, b), lambda g: (g @ w.value.T, x.value.T @ g, g.sum(axis=0)))


def relu(tape, x) -> Var:
    x = _v(tape, x)
    on = x.value > 0
    return tape.op(np.where(on, x.value, 0.0), (x,), lambda g: (g * on,))


def concat(tape, parts, axis: int = 1) -> Var:
    parts = [_v(tape, p) for p in parts]
    sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def back(g):
        return tuple(np.split(g, sizes, axis=axis))

    return tape.op(np.concatenate([p.value for p in parts], axis=axis), parts, back)


def columns(tape, x, start: int, stop: int) -> Var:
    x = _v(tape, x)

    def back(g):
        full = np.zeros_like(x.value)
        full[:, start:stop] = g
        return (full,)

    return tape.op(x.value[:, start:stop], (x,), back)


def take_rows(tape, x, index) -> Var:
    """``x[index]``; gradients scatter-add back onto repeated rows."""
    x = _v(tape, x)
    index = np.asarray(index, dtype=np.int64)
    n = x.shape[0]

    def back(g):
        return (_scatter_sum(index, g, n),)

    return tape.op(x.value[index], (x,), back)


def segment_mean(tape, x, segment, n_segments: int) -> Var:
    """Row mean per segment id; empty segments give zero rows."""
    x = _v(tape, x)
    segment = np.asarray(segment, dtype=np.int64)
    if len(segment) != x.shape[0]:
        raise ShapeError(f"segment_mean: {len(segment)} ids for {x.shape[0]} rows")
    count = np.bincount(segment, minlength=n_segments).astype(np.float64)
    inv = np.where(count > 0, 1.0 / np.maximum(count, 1.0), 0.0)
    scale = inv.reshape((-1,) + (1,) * (x.value.ndim - 1))
    out = _scatter_sum(segment, x.value, n_segments) * scale

    def back(g):
        return ((g * scale)[segment],)

    return tape.op(out, (x,), back)


def batched_matvec(tape, mats, vecs, out_dim: int) -> Var:
    """Per-row ``M_e @ v_e`` where row e of ``mats`` is ``M_e`` flattened row-major."""
    mats, vecs = _v(tape, mats), _v(tape, vecs)
    e, in_dim = vecs.shape
    if mats.shape != (e, out_dim * in_dim):
        raise ShapeError(f"batched_matvec: mats {mats.shape}, expected {(e, out_dim * in_dim)}")
    m = mats.value.reshape(e, out_dim, in_dim)
    out = np.einsum("eoi,ei->eo", m, vecs.value)

    def back(g):
        gm = (g[:, :, None] * vecs.value[:, None, :]).reshape(e, -1)
        gv = np.einsum("eoi,eo->ei", m, g)
        return gm, gv

    return tape.op(out, (mats, vecs), back)


def batch_norm(tape, x, gamma, beta, running_mean, running_var, train: bool,
               momentum: float = 0.1, eps: float = 1e-5) -> Var:
    """Per-feature normalization over rows.

    In training mode the batch statistics are used and the running
    buffers are updated in place (unbiased variance, as is customary).
    """
    x, gamma, beta = _v(tape, x), _v(tape, gamma), _v(tape, beta)
    if x.shape[-1] != gamma.shape[0]:
        raise ShapeError(f"batch_norm: {x.shape[-1]} features vs {gamma.shape[0]} parameters")
    if not train:
        inv = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.value - running_mean) * inv
        out = xhat * gamma.value + beta.value
        return tape.op(out, (x, gamma, beta), lambda g: (
            g * gamma.value * inv, (g * xhat).sum(axis=0), g.sum(axis=0)))

    n = x.shape[0]
    mean = x.value.mean(axis=0)
    var = x.value.var(axis=0)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.value - mean) * inv
    out = xhat * gamma.value + beta.value
    unbiased = var * n / (n - 1) if n > 1 else var
    running_mean *= 1.0 - momentum
    running_mean += momentum * mean
    running_var *= 1.0 - momentum
    running_var += momentum * unbiased

    def back(g):
        gx_hat = g * gamma.value
        gx = inv * (gx_hat - gx_hat.mean(axis=0) - xhat * (gx_hat * xhat).mean(axis=0))
        return gx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return tape.op(out, (x, gamma, beta), back)


def masked_sq_mean(tape, pred, target, rows) -> Var:
    """Mean over ``rows`` of the squared Euclidean error; 0 when ``rows`` is empty."""
    pred = _v(tape, pred)
    target = np.asarray(target.value if isinstance(target, Var) else target)
    rows = np.asarray(rows, dtype=np.int64)
    if pred.shape != target.shape:
        raise ShapeError(f"loss: prediction {pred.shape} vs target {target.shape}")
    if rows.size == 0:
        return tape.op(np.float64(0.0), (pred,), lambda g: (np.zeros_like(pred.value),))
    diff = pred.value[rows] - target[rows]
    value = np.float64((diff * diff).sum() / rows.size)

    def back(g):
        out = np.zeros_like(pred.value)
        np.add.at(out, rows, (2.0 / rows.size) * g * diff)
        return (out,)

    return tape.op(value, (pred,), back)


def dot_sum(tape, x, weights) -> Var:
    """``sum(x * weights)`` for a constant ``weights`` array; handy for probes."""
    x = _v(tape, x)
    weights = np.asarray(weights, dtype=np.float64)
    return tape.op(np.float64((x.value * weights).sum()), (x,), lambda g: (g * weights,))
