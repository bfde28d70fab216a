"""Dense tensors with reverse-mode autodiff on a dynamic per-pass graph.

The engine is deliberately small: 2-D matrices (plus 0-d scalars for
losses), the operation set the matching model needs, and nothing else.
There is no general broadcasting; the only blessed broadcast forms are
row-wise bias addition, scalar addition/subtraction and scalar scaling.

Reductions that cross context rows (softmax denominators and the
attention-weighted sum) sum their addends in sorted order, so permuting
the rows of an attention context reproduces bit-identical outputs.
"""

from __future__ import annotations

import contextlib
import logging
import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, NumericError, UsageError

logger = logging.getLogger(__name__)

EPS_NORM = 1e-12

# Debug switch: verify finiteness after every op (slow; used by tests).
CHECK_FINITE = False

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A numpy array plus an optional gradient slot and tape linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Small amount of operator sugar; the module functions are the real API.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)


def _make(out_data: np.ndarray, parents: Sequence[Tensor],
          backward: Callable[[np.ndarray], None]) -> Tensor:
    """Wrap an op result, recording the node only when grads are live."""
    if CHECK_FINITE and not np.all(np.isfinite(out_data)):
        raise NumericError("non-finite values produced by a tensor op")
    req = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=req)
    if req:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _sorted_sum(arr: np.ndarray, axis: int) -> np.ndarray:
    """Sum along `axis` with addends in ascending order.

    IEEE addition is commutative, so fixing the order makes the reduction
    invariant under permutation of the inputs along that axis.
    """
    return np.sum(np.sort(arr, axis=axis), axis=axis)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul needs (p,q)x(q,r); got {a.data.shape} and {b.data.shape}")
    out = a.data @ b.data

    def backward(g: np.ndarray) -> None:
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(out, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose needs a matrix; got {a.data.shape}")
    out = np.ascontiguousarray(a.data.T)

    def backward(g: np.ndarray) -> None:
        _accum(a, g.T)

    return _make(out, (a,), backward)


# ---------------------------------------------------------------------------
# elementwise suite


def _check_same_shape(a: Tensor, b: Tensor, opname: str) -> None:
    if a.data.shape != b.data.shape:
        raise DimensionError(
            f"{opname} needs matching shapes; got {a.data.shape} and {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    out = a.data + b.data

    def backward(g: np.ndarray) -> None:
        _accum(a, g)
        _accum(b, g)

    return _make(out, (a, b), backward)


def add_rowwise(a: Tensor, bias: Tensor) -> Tensor:
    """Add a 1xq bias row to every row of a pxq matrix."""
    if a.data.ndim != 2 or bias.data.shape != (1, a.data.shape[1]):
        raise DimensionError(
            f"add_rowwise needs (p,q) and (1,q); got {a.data.shape} and {bias.data.shape}")
    out = a.data + bias.data

    def backward(g: np.ndarray) -> None:
        _accum(a, g)
        _accum(bias, g.sum(axis=0, keepdims=True))

    return _make(out, (a, bias), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    """a - b; b may also be a single-element tensor broadcast over a."""
    if b.data.size == 1 and a.data.size != 1:
        bval = b.data.reshape(())
        out = a.data - bval

        def backward_scalar(g: np.ndarray) -> None:
            _accum(a, g)
            _accum(b, np.full(b.data.shape, -g.sum(), dtype=b.data.dtype))

        return _make(out, (a, b), backward_scalar)

    _check_same_shape(a, b, "sub")
    out = a.data - b.data

    def backward(g: np.ndarray) -> None:
        _accum(a, g)
        _accum(b, -g)

    return _make(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product."""
    _check_same_shape(a, b, "mul")
    out = a.data * b.data

    def backward(g: np.ndarray) -> None:
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _make(out, (a, b), backward)


def scale(a: Tensor, s: "float | Tensor") -> Tensor:
    """Multiply by a python scalar or a 0-d/single-element tensor."""
    if isinstance(s, Tensor):
        if s.data.size != 1:
            raise DimensionError(f"scale factor must be a scalar; got {s.data.shape}")
        out = a.data * s.data.reshape(())

        def backward_t(g: np.ndarray) -> None:
            _accum(a, g * s.data.reshape(()))
            _accum(s, np.full(s.data.shape, (g * a.data).sum(), dtype=s.data.dtype))

        return _make(out, (a, s), backward_t)

    out = a.data * s

    def backward(g: np.ndarray) -> None:
        _accum(a, g * s)

    return _make(out, (a,), backward)


def add_scalar(a: Tensor, c: float) -> Tensor:
    out = a.data + c

    def backward(g: np.ndarray) -> None:
        _accum(a, g)

    return _make(out, (a,), backward)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)

    def backward(g: np.ndarray) -> None:
        _accum(a, g * (a.data > 0))

    return _make(out, (a,), backward)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def backward(g: np.ndarray) -> None:
        _accum(a, g * out)

    return _make(out, (a,), backward)


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)

    def backward(g: np.ndarray) -> None:
        _accum(a, g / a.data)

    return _make(out, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g: np.ndarray) -> None:
        _accum(a, g * out * (1.0 - out))

    return _make(out, (a,), backward)


# ---------------------------------------------------------------------------
# shape ops


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    if not parts:
        raise DimensionError("concat_cols needs at least one tensor")
    if any(p.data.ndim != 2 for p in parts):
        raise DimensionError("concat_cols needs matrices")
    rows = parts[0].data.shape[0]
    if any(p.data.shape[0] != rows for p in parts):
        raise DimensionError(
            f"concat_cols row mismatch: {[p.data.shape for p in parts]}")
    out = np.concatenate([p.data for p in parts], axis=1)
    widths = [p.data.shape[1] for p in parts]

    def backward(g: np.ndarray) -> None:
        off = 0
        for p, w in zip(parts, widths):
            _accum(p, g[:, off:off + w])
            off += w

    return _make(out, parts, backward)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise DimensionError("concat_rows needs at least one tensor")
    cols = parts[0].data.shape[1]
    if any(p.data.ndim != 2 or p.data.shape[1] != cols for p in parts):
        raise DimensionError(
            f"concat_rows column mismatch: {[p.data.shape for p in parts]}")
    out = np.concatenate([p.data for p in parts], axis=0)
    heights = [p.data.shape[0] for p in parts]

    def backward(g: np.ndarray) -> None:
        off = 0
        for p, h in zip(parts, heights):
            _accum(p, g[off:off + h, :])
            off += h

    return _make(out, parts, backward)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    out = np.ascontiguousarray(a.data[:, start:stop])

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[:, start:stop] += g

    return _make(out, (a,), backward)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    out = np.ascontiguousarray(a.data[start:stop, :])

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[start:stop, :] += g

    return _make(out, (a,), backward)


# ---------------------------------------------------------------------------
# reductions


def mean_rows(a: Tensor) -> Tensor:
    """Column means: (p,q) -> (1,q)."""
    if a.data.ndim != 2:
        raise DimensionError(f"mean_rows needs a matrix; got {a.data.shape}")
    p = a.data.shape[0]
    out = a.data.mean(axis=0, keepdims=True)

    def backward(g: np.ndarray) -> None:
        _accum(a, np.repeat(g / p, p, axis=0))

    return _make(out, (a,), backward)


def sum_cols(a: Tensor) -> Tensor:
    """Row sums: (p,q) -> (p,1)."""
    if a.data.ndim != 2:
        raise DimensionError(f"sum_cols needs a matrix; got {a.data.shape}")
    out = a.data.sum(axis=1, keepdims=True)

    def backward(g: np.ndarray) -> None:
        _accum(a, np.repeat(g, a.data.shape[1], axis=1))

    return _make(out, (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum())

    def backward(g: np.ndarray) -> None:
        _accum(a, np.full(a.data.shape, g, dtype=a.data.dtype))

    return _make(out, (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    out = np.asarray(a.data.sum() / n)

    def backward(g: np.ndarray) -> None:
        _accum(a, np.full(a.data.shape, g / n, dtype=a.data.dtype))

    return _make(out, (a,), backward)


# ---------------------------------------------------------------------------
# normalization / similarity


def l2_normalize_rows(a: Tensor) -> Tensor:
    """Scale each row to unit norm; zero rows stay zero via the eps guard."""
    if a.data.ndim != 2:
        raise DimensionError(f"l2_normalize_rows needs a matrix; got {a.data.shape}")
    norms = np.linalg.norm(a.data, axis=1, keepdims=True)
    denom = norms + EPS_NORM
    out = a.data / denom

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            dots = (g * a.data).sum(axis=1, keepdims=True)
            safe = np.maximum(norms, EPS_NORM)
            _accum(a, g / denom - a.data * (dots / (safe * denom * denom)))

    return _make(out, (a,), backward)


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Cosine of two 1xd rows as a 0-d tensor; zero vectors give 0."""
    if a.data.shape != b.data.shape or a.data.ndim != 2 or a.data.shape[0] != 1:
        raise DimensionError(
            f"cosine_similarity needs matching 1xd rows; got {a.data.shape} and {b.data.shape}")
    if np.linalg.norm(a.data) == 0.0 or np.linalg.norm(b.data) == 0.0:
        logger.warning("cosine_similarity on a zero vector; returning ~0")
    return sum_all(mul(l2_normalize_rows(a), l2_normalize_rows(b)))


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax with max-subtraction.

    The denominator sums exponentials in sorted order, so the outputs are
    bit-stable under permutation of the columns.
    """
    if a.data.ndim != 2:
        raise DimensionError(f"softmax_rows needs a matrix; got {a.data.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    denom = _sorted_sum(e, axis=1)[:, None]
    out = e / denom

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            dots = (g * out).sum(axis=1, keepdims=True)
            _accum(a, out * (g - dots))

    return _make(out, (a,), backward)


def attend(probs: Tensor, values: Tensor) -> Tensor:
    """Attention application probs(p,q) x values(q,r) with order-canonical sums."""
    if probs.data.ndim != 2 or values.data.ndim != 2 \
            or probs.data.shape[1] != values.data.shape[0]:
        raise DimensionError(
            f"attend needs (p,q)x(q,r); got {probs.data.shape} and {values.data.shape}")
    prods = probs.data[:, :, None] * values.data[None, :, :]
    out = _sorted_sum(prods, axis=1)

    def backward(g: np.ndarray) -> None:
        _accum(probs, g @ values.data.T)
        _accum(values, probs.data.T @ g)

    return _make(out, (probs, values), backward)


def attention_heads(q: Tensor, k: Tensor, v: Tensor, heads: int,
                    capture: list[np.ndarray] | None = None) -> Tensor:
    """Fused scaled multi-head attention: one tape node for the whole block.

    q is (p,d); k and v are (q,d) and share rows.  Columns are split into
    `heads` groups of d/heads, scores scale by 1/sqrt(d/heads), and the
    softmax/weighted-sum reductions are order-canonical so row permutations
    of k/v leave the output bit-identical.  `capture`, when given, receives
    the (heads, p, q) attention probabilities as plain numpy.
    """
    p, d = q.data.shape
    if k.data.ndim != 2 or v.data.ndim != 2 or k.data.shape != v.data.shape \
            or k.data.shape[1] != d:
        raise DimensionError(
            f"attention_heads shape mismatch: q={q.data.shape} k={k.data.shape} v={v.data.shape}")
    if d % heads != 0:
        raise DimensionError(f"width {d} not divisible by {heads} heads")
    qlen = k.data.shape[0]
    dh = d // heads
    inv = 1.0 / math.sqrt(dh)

    qh = q.data.reshape(p, heads, dh).transpose(1, 0, 2)
    kh = k.data.reshape(qlen, heads, dh).transpose(1, 0, 2)
    vh = v.data.reshape(qlen, heads, dh).transpose(1, 0, 2)

    scores = np.einsum("hpd,hqd->hpq", qh, kh) * inv
    e = np.exp(scores - scores.max(axis=2, keepdims=True))
    probs = e / _sorted_sum(e, axis=2)[:, :, None]
    if capture is not None:
        capture.append(probs.copy())

    prods = probs[:, :, :, None] * vh[:, None, :, :]
    outh = _sorted_sum(prods, axis=2)
    out = np.ascontiguousarray(outh.transpose(1, 0, 2).reshape(p, d))

    def backward(g: np.ndarray) -> None:
        gh = g.reshape(p, heads, dh).transpose(1, 0, 2)
        if v.requires_grad:
            dv = np.einsum("hpq,hpd->hqd", probs, gh)
            _accum(v, np.ascontiguousarray(dv.transpose(1, 0, 2).reshape(qlen, d)))
        if q.requires_grad or k.requires_grad:
            dprobs = np.einsum("hpd,hqd->hpq", gh, vh)
            dots = (dprobs * probs).sum(axis=2, keepdims=True)
            dscores = probs * (dprobs - dots)
            if q.requires_grad:
                dq = np.einsum("hpq,hqd->hpd", dscores, kh) * inv
                _accum(q, np.ascontiguousarray(dq.transpose(1, 0, 2).reshape(p, d)))
            if k.requires_grad:
                dk = np.einsum("hpq,hpd->hqd", dscores, qh) * inv
                _accum(k, np.ascontiguousarray(dk.transpose(1, 0, 2).reshape(qlen, d)))

    return _make(out, (q, k, v), backward)


# ---------------------------------------------------------------------------
# dropout


def dropout(a: Tensor, p: float, rng: np.random.Generator,
            training: bool) -> Tensor:
    """Inverted dropout: kept entries scale by 1/(1-p); identity in eval mode."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1); got {p}")
    if not training or p == 0.0:
        return a
    keep = (rng.random(a.data.shape) >= p)
    factor = 1.0 / (1.0 - p)
    mask = keep.astype(a.data.dtype) * a.data.dtype.type(factor)
    out = a.data * mask

    def backward(g: np.ndarray) -> None:
        _accum(a, g * mask)

    return _make(out, (a,), backward)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor, leaves: Iterable[Tensor] | None = None) -> None:
    """Populate grads of every participating leaf reachable from `loss`.

    Gradients accumulate additively when a tensor feeds several ops.  Any
    tensor in `leaves` that did not participate receives a zero gradient.
    The graph is released afterwards; intermediate grads are dropped.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss; got shape {loss.data.shape}")
    if not loss.requires_grad:
        if leaves is not None:
            for t in leaves:
                if t.requires_grad and t.grad is None:
                    t.grad = np.zeros_like(t.data)
        return

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)
    for node in topo:
        if node._parents:
            node._parents = ()
            node._backward = None
            node.grad = None

    if leaves is not None:
        for t in leaves:
            if t.requires_grad and t.grad is None:
                t.grad = np.zeros_like(t.data)
