"""Minimal reverse-mode differentiation engine.

Tensors wrap numpy arrays and record the operation that produced them;
``Tensor.backward`` walks the recorded graph in reverse topological order
and accumulates gradients into every reachable tensor with
``requires_grad``.  The op set is exactly what the relation model needs:
matmul, softmax, same-length 1-D convolution, row max-pooling, fused
cross-entropy, ReLU/sigmoid/tanh, concat, embedding lookup, dropout and
scalar scaling.

64-bit arrays are the default so finite-difference checks have headroom;
training code switches to 32-bit via :func:`set_default_dtype`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

from .errors import LabelError, NumericError, ShapeError, SpanError, UsageError

_DEFAULT_DTYPE = np.float64


def set_default_dtype(dtype) -> None:
    """Set the dtype used for newly created tensors (float32 or float64)."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise UsageError(f"unsupported dtype {dtype}; use float32 or float64")
    _DEFAULT_DTYPE = dtype.type


def get_default_dtype():
    return _DEFAULT_DTYPE


class Tensor:
    """A dense array node in the computation graph.

    ``data`` holds the value, ``grad`` (same shape, lazily allocated) the
    accumulated gradient.  Non-leaf tensors keep references to their
    parents and a backward closure; leaves have neither.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf",
                 parents: tuple = (), backward: Callable | None = None):
        if type(data) is not np.ndarray:
            data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.data = data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(()))

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, seed: float = 1.0) -> None:
        """Backpropagate from a scalar tensor, seeding d(self)/d(self) = seed.

        Leaf gradients accumulate across calls (used for batch averaging);
        call :func:`zero_grads` on the parameters between optimizer steps.
        """
        if self.data.size != 1:
            raise UsageError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _toposort(self)
        self.grad = np.full_like(self.data, seed)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            if node is not self and node._parents:
                node.grad = None  # free intermediate grads early

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"


def _toposort(root: Tensor) -> list[Tensor]:
    """Parents-before-children ordering of the subgraph that needs gradients."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def tensor(data, requires_grad: bool = False) -> Tensor:
    """Create a leaf tensor in the current default dtype."""
    return Tensor(np.array(data, dtype=_DEFAULT_DTYPE), requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_DEFAULT_DTYPE), requires_grad=requires_grad)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


def _result(data: np.ndarray, op: str, parents: tuple, backward: Callable) -> Tensor:
    for p in parents:
        if p.requires_grad:
            return Tensor(data, requires_grad=True, op=op, parents=parents,
                          backward=backward)
    return Tensor(data, op=op)


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(g)

    return _result(out_data, "add", (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product of same-shape tensors."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * b.data)
        if b.requires_grad:
            b.accumulate(g * a.data)

    return _result(out_data, "mul", (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar constant (e.g. the 1/sqrt(d) of attention)."""
    out_data = a.data * a.data.dtype.type(c)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * a.data.dtype.type(c))

    return _result(out_data, "scale", (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix / matrix-vector / vector-matrix product.

    Supported shapes: (m,k)@(k,n) -> (m,n); (m,k)@(k,) -> (m,);
    (k,)@(k,n) -> (n,); (k,)@(k,) -> scalar.
    """
    na, nb = a.data.ndim, b.data.ndim
    if na == 0 or nb == 0 or a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree for shapes {a.shape} and {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        if na == 2 and nb == 2:
            if a.requires_grad:
                a.accumulate(g @ b.data.T)
            if b.requires_grad:
                b.accumulate(a.data.T @ g)
        elif na == 2 and nb == 1:
            if a.requires_grad:
                a.accumulate(np.outer(g, b.data))
            if b.requires_grad:
                b.accumulate(a.data.T @ g)
        elif na == 1 and nb == 2:
            if a.requires_grad:
                a.accumulate(b.data @ g)
            if b.requires_grad:
                b.accumulate(np.outer(a.data, g))
        else:  # 1-D dot
            if a.requires_grad:
                a.accumulate(g * b.data)
            if b.requires_grad:
                b.accumulate(g * a.data)

    return _result(out_data, "matmul", (a, b), backward)


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * (a.data > 0))

    return _result(out_data, "relu", (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    out_data = expit(a.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * out_data * (1.0 - out_data))

    return _result(out_data, "sigmoid", (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * (1.0 - out_data * out_data))

    return _result(out_data, "tanh", (a,), backward)


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate 1-D vectors."""
    if not parts or any(p.data.ndim != 1 for p in parts):
        raise ShapeError("concat expects a non-empty sequence of 1-D tensors")
    out_data = np.concatenate([p.data for p in parts])
    sizes = [p.data.shape[0] for p in parts]

    def backward(g):
        pos = 0
        for p, size in zip(parts, sizes):
            if p.requires_grad:
                p.accumulate(g[pos:pos + size])
            pos += size

    return _result(out_data, "concat", tuple(parts), backward)


def hstack(parts: Sequence[Tensor]) -> Tensor:
    """Column-concatenate 2-D matrices with equal row counts (channel merge)."""
    if not parts or any(p.ndim != 2 for p in parts):
        raise ShapeError("hstack expects a non-empty sequence of 2-D tensors")
    rows = parts[0].shape[0]
    if any(p.shape[0] != rows for p in parts):
        raise ShapeError(f"hstack: row counts differ: {[p.shape for p in parts]}")
    out_data = np.hstack([p.data for p in parts])
    widths = [p.shape[1] for p in parts]

    def backward(g):
        pos = 0
        for p, w in zip(parts, widths):
            if p.requires_grad:
                p.accumulate(g[:, pos:pos + w])
            pos += w

    return _result(out_data, "hstack", tuple(parts), backward)


def row(a: Tensor, i: int) -> Tensor:
    """Select row i of a 2-D tensor as a 1-D tensor."""
    if a.ndim != 2 or not (0 <= i < a.shape[0]):
        raise ShapeError(f"row: index {i} invalid for shape {a.shape}")
    out_data = a.data[i].copy()

    def backward(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[i] += g

    return _result(out_data, "row", (a,), backward)


def slice1d(a: Tensor, lo: int, hi: int) -> Tensor:
    """Contiguous slice of a 1-D tensor (used for LSTM gate unpacking)."""
    if a.ndim != 1 or not (0 <= lo < hi <= a.shape[0]):
        raise ShapeError(f"slice1d: [{lo}:{hi}] invalid for shape {a.shape}")
    out_data = a.data[lo:hi].copy()

    def backward(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[lo:hi] += g

    return _result(out_data, "slice1d", (a,), backward)


def stack_rows(rows_seq: Sequence[Tensor]) -> Tensor:
    """Stack 1-D vectors of equal width into an n x d matrix."""
    if not rows_seq or any(r.ndim != 1 for r in rows_seq):
        raise ShapeError("stack_rows expects a non-empty sequence of 1-D tensors")
    width = rows_seq[0].shape[0]
    if any(r.shape[0] != width for r in rows_seq):
        raise ShapeError(f"stack_rows: widths differ: {[r.shape for r in rows_seq]}")
    out_data = np.stack([r.data for r in rows_seq])

    def backward(g):
        for i, r in enumerate(rows_seq):
            if r.requires_grad:
                r.accumulate(g[i])

    return _result(out_data, "stack_rows", tuple(rows_seq), backward)


def embedding_lookup(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Gather rows of an embedding table; gradient scatters back sparsely."""
    idx = np.asarray(ids, dtype=np.intp)
    if table.ndim != 2:
        raise ShapeError(f"embedding_lookup: table must be 2-D, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise LabelError(f"embedding id out of range [0, {table.shape[0]}): {idx.tolist()}")
    out_data = table.data[idx]

    def backward(g):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, idx, g)

    return _result(out_data, "embedding_lookup", (table,), backward)


def affine2(w: Tensor, x: Tensor, u: Tensor, y: Tensor, b: Tensor) -> Tensor:
    """Fused two-input affine map w @ x + u @ y + b over 1-D vectors.

    One node instead of four for the recurrent pre-activation, which
    dominates graph size in the LSTM.
    """
    if w.ndim != 2 or u.ndim != 2 or x.ndim != 1 or y.ndim != 1 or b.ndim != 1:
        raise ShapeError("affine2 expects w,u 2-D and x,y,b 1-D")
    if w.shape[1] != x.shape[0] or u.shape[1] != y.shape[0] \
            or w.shape[0] != u.shape[0] or b.shape[0] != w.shape[0]:
        raise ShapeError(f"affine2: incompatible shapes w{w.shape} x{x.shape} "
                         f"u{u.shape} y{y.shape} b{b.shape}")
    out_data = w.data @ x.data + u.data @ y.data + b.data

    def backward(g):
        if w.requires_grad:
            w.accumulate(np.outer(g, x.data))
        if x.requires_grad:
            x.accumulate(w.data.T @ g)
        if u.requires_grad:
            u.accumulate(np.outer(g, y.data))
        if y.requires_grad:
            y.accumulate(u.data.T @ g)
        if b.requires_grad:
            b.accumulate(g)

    return _result(out_data, "affine2", (w, x, u, y, b), backward)


def lstm_step(z: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
    """Fused LSTM cell update from packed gate pre-activations.

    ``z`` packs [input, forget, cell, output] pre-activations of width 4h;
    returns (h_new, c_new).  The two outputs carry independent backward
    closures over the shared saved activations, so gradient contributions
    from the hidden path and the cell recurrence both reach z and c_prev.
    """
    if z.ndim != 1 or z.shape[0] % 4:
        raise ShapeError(f"lstm_step: z must be 1-D with width 4h, got {z.shape}")
    h = z.shape[0] // 4
    if c_prev.shape != (h,):
        raise ShapeError(f"lstm_step: c_prev shape {c_prev.shape} != ({h},)")
    zd = z.data
    i_g = expit(zd[:h])
    f_g = expit(zd[h:2 * h])
    g_c = np.tanh(zd[2 * h:3 * h])
    o_g = expit(zd[3 * h:])
    c_data = f_g * c_prev.data + i_g * g_c
    tc = np.tanh(c_data)
    h_data = o_g * tc

    def push_cell_grad(dc):
        # shared tail: dc is the gradient arriving at the new cell state
        if z.requires_grad:
            dz = np.empty_like(zd)
            dz[:h] = dc * g_c * i_g * (1.0 - i_g)
            dz[h:2 * h] = dc * c_prev.data * f_g * (1.0 - f_g)
            dz[2 * h:3 * h] = dc * i_g * (1.0 - g_c * g_c)
            dz[3 * h:] = 0.0
            z.accumulate(dz)
        if c_prev.requires_grad:
            c_prev.accumulate(dc * f_g)

    def backward_h(gh):
        do = gh * tc
        push_cell_grad(gh * o_g * (1.0 - tc * tc))
        if z.requires_grad:
            dz = np.zeros_like(zd)
            dz[3 * h:] = do * o_g * (1.0 - o_g)
            z.accumulate(dz)

    def backward_c(gc):
        push_cell_grad(gc)

    h_out = _result(h_data, "lstm_step_h", (z, c_prev), backward_h)
    c_out = _result(c_data, "lstm_step_c", (z, c_prev), backward_c)
    return h_out, c_out


def dropout(a: Tensor, p_drop: float, rng: np.random.Generator, train: bool = True) -> Tensor:
    """Inverted dropout: surviving entries are scaled by 1/keep at train time."""
    if not (0.0 <= p_drop < 1.0):
        raise UsageError(f"dropout probability must be in [0, 1), got {p_drop}")
    if not train or p_drop == 0.0:
        return a
    keep = 1.0 - p_drop
    mask = (rng.random(a.shape) < keep).astype(a.data.dtype) / a.data.dtype.type(keep)
    out_data = a.data * mask

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * mask)

    return _result(out_data, "dropout", (a,), backward)


# ---------------------------------------------------------------------------
# softmax / convolution / pooling / loss
# ---------------------------------------------------------------------------

def softmax(v: Tensor) -> Tensor:
    """Numerically stable softmax over a 1-D score vector."""
    if v.data.ndim != 1 or v.data.shape[0] < 1:
        raise ShapeError(f"softmax expects a non-empty 1-D tensor, got {v.shape}")
    hi = v.data.max()
    if not (np.isfinite(hi) and np.isfinite(v.data.min())):
        raise NumericError("softmax input contains NaN or Inf")
    e = np.exp(v.data - hi)
    out_data = e / e.sum()

    def backward(g):
        if v.requires_grad:
            v.accumulate(out_data * (g - np.dot(g, out_data)))

    return _result(out_data, "softmax", (v,), backward)


def conv1d_same(h: Tensor, kernel: Tensor, t: int) -> Tensor:
    """Same-length 1-D convolution over rows with right-side zero padding.

    Output row i is flatten(h[i : i+t]) @ kernel, windows past the last row
    padded with zeros, so a window stays anchored at its first token.
    kernel has shape (t*d_in, d_out).
    """
    if t < 1:
        raise UsageError(f"kernel size must be >= 1, got {t}")
    if h.ndim != 2 or kernel.ndim != 2:
        raise ShapeError(f"conv1d_same expects 2-D tensors, got {h.shape} and {kernel.shape}")
    n, d_in = h.shape
    if kernel.shape[0] != t * d_in:
        raise ShapeError(f"conv1d_same: kernel rows {kernel.shape[0]} != t*d = {t}*{d_in}")
    windows = np.zeros((n, t * d_in), dtype=h.data.dtype)
    for s in range(t):
        windows[: n - s if s else n, s * d_in:(s + 1) * d_in] = h.data[s:]
    out_data = windows @ kernel.data

    def backward(g):
        if kernel.requires_grad:
            kernel.accumulate(windows.T @ g)
        if h.requires_grad:
            g_windows = g @ kernel.data.T
            if h.grad is None:
                h.grad = np.zeros_like(h.data)
            for s in range(t):
                lim = n - s
                h.grad[s:] += g_windows[:lim, s * d_in:(s + 1) * d_in]

    return _result(out_data, "conv1d_same", (h, kernel), backward)


def max_pool_rows(h: Tensor, lo: int, hi: int) -> Tensor:
    """Componentwise max over rows lo..hi-1; ties route gradient to the
    lowest row index."""
    if h.ndim != 2:
        raise ShapeError(f"max_pool_rows expects a 2-D tensor, got {h.shape}")
    n = h.shape[0]
    if lo < 0 or hi > n or lo >= hi:
        raise SpanError(f"max_pool_rows: empty or out-of-range span [{lo}, {hi}) for {n} rows")
    block = h.data[lo:hi]
    arg = np.argmax(block, axis=0)  # first max on ties
    out_data = block[arg, np.arange(h.shape[1])]

    def backward(g):
        if h.requires_grad:
            if h.grad is None:
                h.grad = np.zeros_like(h.data)
            np.add.at(h.grad, (lo + arg, np.arange(h.shape[1])), g)

    return _result(out_data, "max_pool_rows", (h,), backward)


def cross_entropy(p: Tensor, gold: int) -> Tensor:
    """Negative log-likelihood -ln p[gold] of a probability vector.

    When ``p`` is the direct output of :func:`softmax` the loss is computed
    from the pre-softmax logits in fused log-sum-exp form, which keeps both
    the value and the gradient finite even for saturated distributions.
    """
    if p.ndim != 1:
        raise ShapeError(f"cross_entropy expects a 1-D probability vector, got {p.shape}")
    k = p.shape[0]
    if not (0 <= gold < k):
        raise LabelError(f"gold class {gold} out of range [0, {k})")
    if abs(float(p.data.sum()) - 1.0) > 1e-6:
        raise UsageError(f"cross_entropy input sums to {float(p.data.sum()):.8f}, not 1")

    if p.op == "softmax":
        logits = p._parents[0] if p._parents else None
        if logits is not None:
            return _cross_entropy_from_logits(logits, gold)
        # softmax of a constant: loss is a constant too
        return Tensor(np.asarray(-np.log(p.data[gold])), op="cross_entropy")

    out_data = np.asarray(-np.log(p.data[gold]))

    def backward(g):
        if p.requires_grad:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            p.grad[gold] += -g / p.data[gold]

    return _result(out_data, "cross_entropy", (p,), backward)


def _cross_entropy_from_logits(logits: Tensor, gold: int) -> Tensor:
    m = logits.data.max()
    lse = m + math.log(np.exp(logits.data - m).sum())
    out_data = np.asarray(lse - logits.data[gold], dtype=logits.data.dtype)
    probs = np.exp(logits.data - lse)

    def backward(g):
        if logits.requires_grad:
            delta = probs.copy()
            delta[gold] -= 1.0
            logits.accumulate(g * delta)

    return _result(out_data, "cross_entropy", (logits,), backward)


# ---------------------------------------------------------------------------
# graph replay + finite-difference verification
# ---------------------------------------------------------------------------

@dataclass
class Graph:
    """A replayable scalar-loss computation over named parameters.

    ``loss_fn`` rebuilds the forward pass from scratch; it receives a fresh
    ``numpy`` generator seeded with ``rng_seed`` on every call, so replaying
    the graph with the same seed reproduces values bit-exactly (including
    dropout masks).
    """

    loss_fn: Callable[[np.random.Generator], Tensor]
    params: dict[str, Tensor]
    rng_seed: int = 0

    def loss(self) -> Tensor:
        return self.loss_fn(np.random.default_rng(self.rng_seed))


@dataclass
class ParamCheck:
    name: str
    n_entries: int
    max_rel_err: float
    worst_index: tuple
    n_failed: int

    @property
    def passed(self) -> bool:
        return self.n_failed == 0


@dataclass
class GradCheckReport:
    eps: float
    tol: float
    entries: list[ParamCheck] = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def format(self) -> str:
        lines = [f"{'parameter':<24} {'entries':>8} {'max rel err':>14} status"]
        for e in self.entries:
            status = "ok" if e.passed else f"FAIL ({e.n_failed} entries, worst at {e.worst_index})"
            lines.append(f"{e.name:<24} {e.n_entries:>8} {e.max_rel_err:>14.3e} {status}")
        lines.append(f"overall: max rel err {self.max_rel_err:.3e} -> "
                     f"{'PASS' if self.passed else 'FAIL'} (tol {self.tol:g})")
        return "\n".join(lines)


def grad_check(graph: Graph, eps: float = 1e-4, tol: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    Every entry of every parameter with ``requires_grad`` is perturbed by
    +/- eps and the loss recomputed; the relative error against the analytic
    gradient is |a - n| / max(1, |a|, |n|).  Frozen parameters are excluded.
    Requires 64-bit parameters for meaningful tolerances.
    """
    loss0 = graph.loss()
    if loss0.data.size != 1:
        raise UsageError(f"grad_check needs a scalar loss, got shape {loss0.shape}")
    checked = {name: p for name, p in graph.params.items() if p.requires_grad}
    zero_grads(checked.values())
    loss0.backward()
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for name, p in checked.items()}

    report = GradCheckReport(eps=eps, tol=tol)
    for name, p in checked.items():
        flat = p.data.reshape(-1)
        max_err, worst, n_failed = 0.0, (0,), 0
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            f_plus = graph.loss().item()
            flat[idx] = orig - eps
            f_minus = graph.loss().item()
            flat[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = analytic[name].reshape(-1)[idx]
            rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            if rel > max_err:
                max_err = rel
                worst = np.unravel_index(idx, p.data.shape)
            if rel > tol:
                n_failed += 1
        report.entries.append(ParamCheck(name=name, n_entries=flat.size,
                                         max_rel_err=max_err, worst_index=worst,
                                         n_failed=n_failed))
    return report
