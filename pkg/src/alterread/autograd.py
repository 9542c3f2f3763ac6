"""Dense float64 tensors with a define-by-run tape for reverse-mode gradients.

A ``Graph`` records every tracked operation in creation order; reverse
creation order is then a valid topological order for the backward sweep.
Ops executed with no graph active (or on untracked inputs) just compute
values, which is the cheap path used for evaluation and finite-difference
probing.

Broadcasting is deliberately restricted to tensor-with-scalar; anything
else must go through an explicit op (``linear`` for bias rows,
``broadcast_rows`` for repeating a vector), so shape bugs surface as
errors instead of silently broadcast results.
"""

import threading

import numpy as np

from . import kernels
from .errors import (ContractError, DimensionError, EmptySupportError,
                     LifecycleError, NumericFault, VocabularyError)

_tls = threading.local()


def _active_graph():
    g = getattr(_tls, "graph", None)
    if g is not None and g._state != "open":
        return None
    return g


class Tensor:
    """A float64 ndarray plus bookkeeping for the recorded graph."""

    __slots__ = ("data", "requires_grad", "node")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if not kernels.all_finite(arr):
            raise NumericFault("tensor constructed from non-finite values")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(arr):
    t = Tensor.__new__(Tensor)
    t.data = arr
    t.requires_grad = False
    t.node = None
    return t


class Node:
    __slots__ = ("op", "out", "inputs", "backward", "graph")

    def __init__(self, op, out, inputs, backward, graph):
        self.op = op
        self.out = out
        self.inputs = inputs
        self.backward = backward
        self.graph = graph


class Graph:
    """Tape of recorded operations; single-use, confined to one thread."""

    def __init__(self):
        self._nodes = []
        self._state = "open"

    def __enter__(self):
        if getattr(_tls, "graph", None) is not None:
            raise LifecycleError("a graph is already recording in this thread")
        _tls.graph = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _tls.graph = None
        return False

    def __len__(self):
        return len(self._nodes)

    def backward(self, loss):
        """Reverse sweep from a scalar loss.

        Returns {leaf Tensor: gradient ndarray} for every requires-grad
        leaf reachable from the loss. Single use: the tape is released
        afterwards and a second call raises.
        """
        if self._state != "open":
            raise LifecycleError("backward was already run; the graph is released")
        if not isinstance(loss, Tensor):
            raise ContractError("loss must be a Tensor")
        if loss.data.shape != ():
            raise ContractError(f"loss must be scalar, got shape {loss.data.shape}")
        if loss.node is None or loss.node.graph is not self:
            raise LifecycleError("loss is not attached to this graph")

        grads = {loss: np.ones((), dtype=np.float64)}
        # ids of accumulator arrays the engine allocated itself and may
        # mutate in place; entries leave the set exactly when their array
        # leaves ``grads``, so no stale id can alias a reused allocation
        owned = set()
        for node in reversed(self._nodes):
            g = grads.pop(node.out, None)
            if g is None:
                continue
            owned.discard(id(g))
            for t, gt in zip(node.inputs, node.backward(g)):
                if gt is None:
                    continue
                if not (t.requires_grad or t.node is not None):
                    continue
                if gt.shape != t.data.shape:
                    raise DimensionError(
                        f"gradient shape {gt.shape} does not match value "
                        f"shape {t.data.shape} in backward of {node.op}")
                cur = grads.get(t)
                if cur is None:
                    grads[t] = gt
                elif id(cur) in owned:
                    cur += gt
                else:
                    fresh = cur + gt
                    grads[t] = fresh
                    owned.add(id(fresh))
        self._state = "done"
        self._nodes.clear()
        return grads


def backward(loss):
    """Run the reverse sweep on the graph the loss was recorded in."""
    if not isinstance(loss, Tensor):
        raise ContractError("loss must be a Tensor")
    if loss.node is None:
        raise LifecycleError("loss was computed outside any recording graph")
    return loss.node.graph.backward(loss)


def _tracked(*tensors):
    return any(t.node is not None or t.requires_grad for t in tensors)


def _make(op, data, inputs, backward_fn):
    if not kernels.all_finite(data):
        raise NumericFault(f"non-finite values produced by {op}")
    out = _wrap(data)
    g = _active_graph()
    if g is not None and _tracked(*inputs):
        node = Node(op, out, inputs, backward_fn, g)
        out.node = node
        g._nodes.append(node)
    return out


def _need(t):
    return t.node is not None or t.requires_grad


# ---------------------------------------------------------------------------
# core ops
# ---------------------------------------------------------------------------

def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(
            f"matmul needs two matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    na, nb = _need(a), _need(b)

    def bwd(g):
        return (g @ bd.T if na else None,
                ad.T @ g if nb else None)

    return _make("matmul", ad @ bd, (a, b), bwd)


def transpose(a):
    if a.data.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got shape {a.shape}")

    def bwd(g):
        return (g.T,)

    return _make("transpose", a.data.T, (a,), bwd)


def _binary_shapes(op, a, b):
    if a.shape == b.shape or a.shape == () or b.shape == ():
        return
    raise DimensionError(
        f"{op} needs equal shapes or a scalar operand, got {a.shape} and {b.shape}")


def _unbroadcast(g, shape):
    # only the scalar case can occur under the trivial broadcasting rule
    if shape == () and g.shape != ():
        return np.asarray(g.sum())
    return g


def add(a, b):
    if not isinstance(b, Tensor):
        b = _wrap(np.asarray(b, dtype=np.float64))
    _binary_shapes("add", a, b)
    na, nb = _need(a), _need(b)
    ash, bsh = a.shape, b.shape

    def bwd(g):
        return (_unbroadcast(g, ash) if na else None,
                _unbroadcast(g, bsh) if nb else None)

    return _make("add", a.data + b.data, (a, b), bwd)


def mul(a, b):
    if not isinstance(b, Tensor):
        b = _wrap(np.asarray(b, dtype=np.float64))
    _binary_shapes("mul", a, b)
    ad, bd = a.data, b.data
    na, nb = _need(a), _need(b)
    ash, bsh = a.shape, b.shape

    def bwd(g):
        return (_unbroadcast(g * bd, ash) if na else None,
                _unbroadcast(g * ad, bsh) if nb else None)

    return _make("mul", ad * bd, (a, b), bwd)


def one_minus(a):
    def bwd(g):
        return (-g,)

    return _make("one-minus", 1.0 - a.data, (a,), bwd)


def scale(a, c):
    c = float(c)

    def bwd(g):
        return (g * c,)

    return _make("scale", a.data * c, (a,), bwd)


def sigmoid(a):
    out = kernels.sigmoid(a.data)

    def bwd(g):
        return (kernels.sigmoid_grad(out, g),)

    return _make("sigmoid", out, (a,), bwd)


def tanh(a):
    out = np.tanh(a.data)

    def bwd(g):
        return (kernels.tanh_grad(out, g),)

    return _make("tanh", out, (a,), bwd)


_ELEMENTWISE = {
    "add": add,
    "mul": mul,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "one-minus": one_minus,
    "scale": scale,
}


def elementwise(tag, *operands):
    """Dispatch on the elementwise op tag (add, mul, sigmoid, ...)."""
    try:
        fn = _ELEMENTWISE[tag]
    except KeyError:
        raise ContractError(f"unknown elementwise tag {tag!r}") from None
    return fn(*operands)


def masked_softmax(logits, mask):
    """Max-subtracted exp-normalization over True mask positions.

    Masked positions come out exactly 0; each row of the output sums to 1.
    Works on a vector or row-wise on a matrix; the mask is a constant.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != logits.shape:
        raise DimensionError(
            f"mask shape {mask.shape} does not match logits shape {logits.shape}")
    if logits.data.ndim not in (1, 2):
        raise DimensionError(
            f"masked_softmax needs a vector or matrix, got shape {logits.shape}")
    flat = mask.reshape(-1, mask.shape[-1]) if mask.ndim == 2 else mask[None, :]
    if not flat.any(axis=-1).all():
        raise EmptySupportError("masked_softmax over a fully masked row")
    out = kernels.masked_softmax(logits.data, mask)

    def bwd(g):
        return (kernels.masked_softmax_grad(out, mask, g),)

    return _make("masked_softmax", out, (logits,), bwd)


def concat(parts, axis=0):
    parts = list(parts)
    if not parts:
        raise ContractError("concat of zero parts")
    rank = parts[0].data.ndim
    ax = axis % rank if rank else axis
    for p in parts[1:]:
        if p.data.ndim != rank:
            raise DimensionError(
                f"concat rank mismatch: {parts[0].shape} vs {p.shape}")
        for d in range(rank):
            if d != ax and p.shape[d] != parts[0].shape[d]:
                raise DimensionError(
                    f"concat non-axis dimensions disagree: {parts[0].shape} "
                    f"vs {p.shape} on axis {axis}")
    sizes = [p.shape[ax] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        idx = [slice(None)] * rank
        grads = []
        for i in range(len(sizes)):
            idx[ax] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(idx)])
        return tuple(grads)

    data = np.concatenate([p.data for p in parts], axis=ax)
    return _make("concat", data, tuple(parts), bwd)


def narrow(a, axis, start, length):
    """Contiguous slice along one axis (inverse piece of concat)."""
    rank = a.data.ndim
    ax = axis % rank
    if start < 0 or start + length > a.shape[ax]:
        raise DimensionError(
            f"narrow [{start}:{start + length}] out of range for axis {ax} "
            f"of shape {a.shape}")
    idx = [slice(None)] * rank
    idx[ax] = slice(start, start + length)
    idx = tuple(idx)
    ash = a.shape

    def bwd(g):
        full = np.zeros(ash, dtype=np.float64)
        full[idx] = g
        return (full,)

    return _make("narrow", a.data[idx].copy(), (a,), bwd)


def split(a, sizes, axis=0):
    """Split into consecutive narrows of the given sizes."""
    if sum(sizes) != a.shape[axis % a.data.ndim]:
        raise DimensionError(
            f"split sizes {sizes} do not cover axis {axis} of shape {a.shape}")
    parts, start = [], 0
    for s in sizes:
        parts.append(narrow(a, axis, start, s))
        start += s
    return parts


def stack_steps(parts):
    """Stack equal-shaped matrices along a new middle axis: n x (B,k) -> (B,n,k)."""
    parts = list(parts)
    if not parts:
        raise ContractError("stack of zero parts")
    for p in parts[1:]:
        if p.shape != parts[0].shape:
            raise DimensionError(
                f"stack shape mismatch: {parts[0].shape} vs {p.shape}")

    def bwd(g):
        return tuple(g[:, i, :] for i in range(len(parts)))

    data = np.stack([p.data for p in parts], axis=1)
    return _make("stack_steps", data, tuple(parts), bwd)


def linear(x, w, b=None):
    """x @ w.T (+ b): x is (B,n_in), w is (n_out,n_in), b is (n_out,)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[1]:
        raise DimensionError(
            f"linear shapes disagree: x {x.shape} vs w {w.shape}")
    data = x.data @ w.data.T
    if b is not None:
        if b.shape != (w.shape[0],):
            raise DimensionError(
                f"bias shape {b.shape} does not match output width {w.shape[0]}")
        data = data + b.data
    xd, wd = x.data, w.data
    nx, nw = _need(x), _need(w)
    nb = b is not None and _need(b)

    def bwd(g):
        gx = g @ wd if nx else None
        gw = g.T @ xd if nw else None
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=0) if nb else None

    inputs = (x, w) if b is None else (x, w, b)
    return _make("linear", data, inputs, bwd)


def linear2(x, w, y, v):
    """x @ w.T + y @ v.T in one node (both GRU pre-activation terms)."""
    if x.shape[1] != w.shape[1] or y.shape[1] != v.shape[1] \
            or w.shape[0] != v.shape[0] or x.shape[0] != y.shape[0]:
        raise DimensionError(
            f"linear2 shapes disagree: x {x.shape} w {w.shape} "
            f"y {y.shape} v {v.shape}")
    xd, wd, yd, vd = x.data, w.data, y.data, v.data
    nx, nw, ny, nv = _need(x), _need(w), _need(y), _need(v)

    def bwd(g):
        return (g @ wd if nx else None,
                g.T @ xd if nw else None,
                g @ vd if ny else None,
                g.T @ yd if nv else None)

    return _make("linear2", xd @ wd.T + yd @ vd.T, (x, w, y, v), bwd)


def gru_reset(a_r, h):
    """sigmoid(a_r) * h, the reset-gated recurrent input."""
    if a_r.shape != h.shape:
        raise DimensionError(
            f"gru_reset shapes disagree: {a_r.shape} vs {h.shape}")
    rh, r = kernels.gru_reset(a_r.data, h.data)
    hd = h.data

    def bwd(g):
        return kernels.gru_reset_grad(r, hd, g)

    return _make("gru_reset", rh, (a_r, h), bwd)


def gru_mix(a_u, a_c, h):
    """(1-u)*h + u*tanh(a_c) with u = sigmoid(a_u), fused."""
    if not (a_u.shape == a_c.shape == h.shape):
        raise DimensionError(
            f"gru_mix shapes disagree: {a_u.shape}, {a_c.shape}, {h.shape}")
    out, u, c = kernels.gru_mix(a_u.data, a_c.data, h.data)
    hd = h.data

    def bwd(g):
        return kernels.gru_mix_grad(u, c, hd, g)

    return _make("gru_mix", out, (a_u, a_c, h), bwd)


def embed(table, ids):
    """Gather rows of (|V|,d) table by an integer id vector."""
    ids = np.asarray(ids)
    if ids.ndim != 1:
        raise DimensionError(f"embed takes an id vector, got shape {ids.shape}")
    if table.data.ndim != 2:
        raise DimensionError(
            f"embedding table must be a matrix, got shape {table.shape}")
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        bad = int(ids[(ids < 0) | (ids >= vocab)][0])
        raise VocabularyError(f"token id {bad} outside vocabulary of size {vocab}")
    tsh = table.shape

    def bwd(g):
        gt = np.zeros(tsh, dtype=np.float64)
        np.add.at(gt, ids, g)
        return (gt,)

    return _make("embed", table.data[ids], (table,), bwd)


def rowwise_dot(enc, key):
    """scores[b,i] = enc[b,i,:] . key[b,:] for (B,n,k) against (B,k)."""
    if enc.data.ndim != 3 or key.data.ndim != 2 \
            or enc.shape[0] != key.shape[0] or enc.shape[2] != key.shape[1]:
        raise DimensionError(
            f"rowwise_dot shapes disagree: {enc.shape} vs {key.shape}")
    ed, kd = enc.data, key.data
    ne, nk = _need(enc), _need(key)

    def bwd(g):
        ge = g[:, :, None] * kd[:, None, :] if ne else None
        gk = np.matmul(g[:, None, :], ed)[:, 0, :] if nk else None
        return ge, gk

    data = np.matmul(ed, kd[:, :, None])[:, :, 0]
    return _make("rowwise_dot", data, (enc, key), bwd)


def weighted_sum(weights, enc):
    """glimpse[b,:] = sum_i weights[b,i] * enc[b,i,:]."""
    if weights.data.ndim != 2 or enc.data.ndim != 3 \
            or weights.shape != enc.shape[:2]:
        raise DimensionError(
            f"weighted_sum shapes disagree: {weights.shape} vs {enc.shape}")
    wd, ed = weights.data, enc.data
    nw, ne = _need(weights), _need(enc)

    def bwd(g):
        gw = np.matmul(ed, g[:, :, None])[:, :, 0] if nw else None
        ge = wd[:, :, None] * g[:, None, :] if ne else None
        return gw, ge

    data = np.matmul(wd[:, None, :], ed)[:, 0, :]
    return _make("weighted_sum", data, (weights, enc), bwd)


def where_rows(cond, a, b):
    """Per-row select: row r of a where cond[r] else row r of b."""
    cond = np.asarray(cond, dtype=bool)
    if a.shape != b.shape or cond.shape != (a.shape[0],):
        raise DimensionError(
            f"where_rows shapes disagree: cond {cond.shape}, {a.shape}, {b.shape}")
    sel = cond[:, None]

    def bwd(g):
        return np.where(sel, g, 0.0), np.where(sel, 0.0, g)

    return _make("where_rows", np.where(sel, a.data, b.data), (a, b), bwd)


def broadcast_rows(v, n):
    """Repeat a vector as n identical rows."""
    if v.data.ndim != 1:
        raise DimensionError(f"broadcast_rows takes a vector, got {v.shape}")

    def bwd(g):
        return (g.sum(axis=0),)

    data = np.repeat(v.data[None, :], n, axis=0)
    return _make("broadcast_rows", data, (v,), bwd)


def rowsum(a):
    """Sum a matrix over its last axis: (B,n) -> (B,)."""
    if a.data.ndim != 2:
        raise DimensionError(f"rowsum needs a matrix, got shape {a.shape}")
    n = a.shape[1]

    def bwd(g):
        return (np.broadcast_to(g[:, None], (g.shape[0], n)),)

    return _make("rowsum", a.data.sum(axis=1), (a,), bwd)


def sum_all(a):
    sh = a.shape

    def bwd(g):
        return (np.broadcast_to(g, sh),)

    return _make("sum_all", np.asarray(a.data.sum()), (a,), bwd)


def mean_all(a):
    sh, n = a.shape, a.data.size

    def bwd(g):
        return (np.broadcast_to(g / n, sh),)

    return _make("mean_all", np.asarray(a.data.mean()), (a,), bwd)


def neg_log(p, floor=1e-12):
    """-log(p + floor), the pointer-mass loss map."""
    denom = p.data + floor
    if (denom <= 0.0).any():
        raise NumericFault("log of a non-positive probability")

    def bwd(g):
        return (-g / denom,)

    return _make("neg_log", -np.log(denom), (p,), bwd)


def dropout(x, rate, rng):
    """Inverted-scaling dropout; fresh mask per call from the given rng.

    Only the boolean mask is saved for backward (it can be a large share
    of tape memory at full-scale dims).
    """
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0,1), got {rate}")
    if rate == 0.0:
        return x
    inv = 1.0 / (1.0 - rate)
    mask = rng.random(x.shape) >= rate

    def bwd(g):
        return (np.where(mask, g * inv, 0.0),)

    return _make("dropout", np.where(mask, x.data * inv, 0.0), (x,), bwd)
