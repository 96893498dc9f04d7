"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

A Tensor wraps an ndarray plus the closure that maps its output gradient to
parent gradients.  backward() walks the tape in reverse topological order
and accumulates into .grad.  Everything runs in float64 so finite-difference
checks have headroom.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "op")

    def __init__(self, data, parents=(), backward_fn=None, op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def backward(self, check_finite=False):
        """Populate .grad on every tensor reachable from this scalar root.

        Weight gradients of linear layers arrive as deferred (input, grad)
        row pairs; they are stacked per weight tensor and reduced with one
        matrix product at the end, which keeps many tiny per-node decoder
        calls out of BLAS.  With check_finite, a non-finite gradient raises
        NumericError naming the producing operation.
        """
        if self.data.size != 1:
            raise NumericError("backward() expects a scalar loss")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        deferred = {}
        for node in reversed(topo):
            if node.backward_fn is None or node.grad is None:
                continue
            for parent, g in zip(node.parents, node.backward_fn(node.grad)):
                if g is None:
                    continue
                if type(g) is tuple:  # deferred outer product rows
                    slot = deferred.get(id(parent))
                    if slot is None:
                        deferred[id(parent)] = (parent, [g[0]], [g[1]])
                    else:
                        slot[1].append(g[0])
                        slot[2].append(g[1])
                    continue
                if check_finite and not np.all(np.isfinite(g)):
                    raise NumericError(f"non-finite gradient from op {node.op!r}")
                # accumulation stays out-of-place: closures may hand back
                # views of the incoming gradient
                parent.grad = g if parent.grad is None else parent.grad + g
        for parent, xs, gs in deferred.values():
            x = xs[0] if len(xs) == 1 else np.concatenate(xs, axis=0)
            g = gs[0] if len(gs) == 1 else np.concatenate(gs, axis=0)
            gw = x.T @ g
            if check_finite and not np.all(np.isfinite(gw)):
                raise NumericError("non-finite gradient from op 'linear'")
            parent.grad = gw if parent.grad is None else parent.grad + gw


def constant(data):
    return Tensor(data)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data @ b.data

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor(out, (a, b), backward, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b in one tape node.  The weight gradient is handed to the
    walker as deferred rows (see Tensor.backward)."""
    out = x.data @ w.data + b.data

    def backward(g):
        return g @ w.data.T, (x.data, g), g.sum(axis=0)

    return Tensor(out, (x, w, b), backward, "linear")


def project(p: np.ndarray, x: Tensor) -> Tensor:
    """Multiply by a constant matrix (gather / scatter / averaging)."""
    pt = p.T.copy()
    out = p @ x.data

    def backward(g):
        return (pt @ g,)

    return Tensor(out, (x,), backward, "project")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; b may be a 1-D bias broadcast over rows."""
    out = a.data + b.data

    def backward(g):
        ga = g
        gb = g.sum(axis=0) if b.data.ndim == 1 and g.ndim == 2 else g
        return ga, gb

    return Tensor(out, (a, b), backward, "add")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        return (g * c,)

    return Tensor(a.data * c, (a,), backward, "scale")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        return (g * mask,)

    return Tensor(a.data * mask, (a,), backward, "relu")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return Tensor(out, (a,), backward, "tanh")


def concat(tensors, axis=1) -> Tensor:
    datas = [t.data for t in tensors]
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        if axis == 0:
            return [g[offsets[i] : offsets[i + 1]] for i in range(len(sizes))]
        return [g[:, offsets[i] : offsets[i + 1]] for i in range(len(sizes))]

    return Tensor(out, tuple(tensors), backward, "concat")


def narrow(a: Tensor, start: int, size: int) -> Tensor:
    """Column slice [start, start+size) of a 2-D tensor."""
    out = a.data[:, start : start + size]

    def backward(g):
        full = np.zeros_like(a.data)
        full[:, start : start + size] = g
        return (full,)

    return Tensor(out, (a,), backward, "narrow")


class RowScatter:
    """Precomputed index machinery for summing rows by target index:
    out[i] = sum over e with idx[e] == i of x[e].  Sorting once makes the
    repeated scatter a contiguous reduceat."""

    def __init__(self, idx, n_out: int):
        idx = np.asarray(idx, dtype=np.int64)
        self.idx = idx
        self.n_out = n_out
        self.order = np.argsort(idx, kind="stable")
        sorted_idx = idx[self.order]
        self.unique, self.starts = np.unique(sorted_idx, return_index=True)
        self.counts = np.bincount(idx, minlength=n_out).astype(np.float64)
        self.safe_counts = np.maximum(self.counts, 1.0)

    def sum(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros((self.n_out, x.shape[1]))
        if self.idx.size:
            out[self.unique] = np.add.reduceat(x[self.order], self.starts, axis=0)
        return out


def gather_rows(x: Tensor, idx, scatter: RowScatter) -> Tensor:
    """Row gather x[idx] with a precomputed reverse scatter."""
    out = x.data[idx]

    def backward(g):
        return (scatter.sum(g),)

    return Tensor(out, (x,), backward, "gather_rows")


def take_rows(x: Tensor, rows) -> Tensor:
    """Row selection for pairwise-distinct rows (backward is assignment)."""
    rows = np.asarray(rows, dtype=np.int64)
    out = x.data[rows]

    def backward(g):
        full = np.zeros_like(x.data)
        full[rows] = g
        return (full,)

    return Tensor(out, (x,), backward, "take_rows")


def scatter_mean(x: Tensor, scatter: RowScatter) -> Tensor:
    """Mean of x rows grouped by scatter.idx; empty groups give zero rows."""
    out = scatter.sum(x.data) / scatter.safe_counts[:, None]

    def backward(g):
        return (g[scatter.idx] / scatter.safe_counts[scatter.idx, None],)

    return Tensor(out, (x,), backward, "scatter_mean")


def segment_mean_contig(x: Tensor, starts, group_of_row) -> Tensor:
    """Per-group mean over contiguous, non-empty row blocks."""
    starts = np.asarray(starts, dtype=np.int64)
    group_of_row = np.asarray(group_of_row, dtype=np.int64)
    counts = np.diff(np.append(starts, x.data.shape[0])).astype(np.float64)
    out = np.add.reduceat(x.data, starts, axis=0) / counts[:, None]

    def backward(g):
        return (g[group_of_row] / counts[group_of_row, None],)

    return Tensor(out, (x,), backward, "segment_mean_contig")


def segment_max_contig(x: Tensor, starts) -> Tensor:
    """Per-group max over contiguous, non-empty row blocks; the gradient
    flows to the first argmax row of each group and channel."""
    starts = np.asarray(starts, dtype=np.int64)
    n = x.data.shape[0]
    bounds = np.append(starts, n)
    out = np.maximum.reduceat(x.data, starts, axis=0)
    arg = np.empty_like(out, dtype=np.int64)
    for b in range(starts.size):
        block = x.data[bounds[b] : bounds[b + 1]]
        arg[b] = bounds[b] + block.argmax(axis=0)
    cols = np.broadcast_to(np.arange(x.data.shape[1]), out.shape)

    def backward(g):
        full = np.zeros_like(x.data)
        full[arg, cols] = g
        return (full,)

    return Tensor(out, (x,), backward, "segment_max_contig")


def mean_rows(a: Tensor) -> Tensor:
    n = a.data.shape[0]
    out = a.data.mean(axis=0, keepdims=True)

    def backward(g):
        return (np.broadcast_to(g / n, a.data.shape),)

    return Tensor(out, (a,), backward, "mean_rows")


def max_rows(a: Tensor) -> Tensor:
    """Row-wise max pool to (1, d); gradient flows only to the argmax row
    of each column (first row on ties)."""
    idx = a.data.argmax(axis=0)
    out = a.data[idx, np.arange(a.data.shape[1])][None, :]

    def backward(g):
        full = np.zeros_like(a.data)
        full[idx, np.arange(a.data.shape[1])] = g[0]
        return (full,)

    return Tensor(out, (a,), backward, "max_rows")


def tile_rows(a: Tensor, n: int) -> Tensor:
    """(1, d) -> (n, d) broadcast."""
    out = np.broadcast_to(a.data, (n, a.data.shape[1])).copy()

    def backward(g):
        return (g.sum(axis=0, keepdims=True),)

    return Tensor(out, (a,), backward, "tile_rows")


def batchnorm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5):
    """Training-mode batch normalization over axis 0 (biased variance).

    Returns (out, batch_mean, batch_var); the statistics are plain arrays
    for the caller to fold into running averages.  The forward is pure.
    """
    x = a.data
    mu = x.mean(axis=0)
    xc = x - mu
    var = (xc * xc).mean(axis=0)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        dbeta = g.sum(axis=0)
        dgamma = (g * xhat).sum(axis=0)
        dxhat = g * gamma.data
        dx = inv * (dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0))
        return dx, dgamma, dbeta

    return Tensor(out, (a, gamma, beta), backward, "batchnorm"), mu, var


def batchnorm_eval(a: Tensor, gamma: Tensor, beta: Tensor, running_mean, running_var, eps: float = 1e-5) -> Tensor:
    inv = 1.0 / np.sqrt(running_var + eps)
    xhat = (a.data - running_mean) * inv

    def backward(g):
        dbeta = g.sum(axis=0)
        dgamma = (g * xhat).sum(axis=0)
        dx = g * gamma.data * inv
        return dx, dgamma, dbeta

    return Tensor(xhat * gamma.data + beta.data, (a, gamma, beta), backward, "batchnorm_eval")


def softmax_cross_entropy(logits: Tensor, labels, row_weights=None) -> Tensor:
    """Cross-entropy of (n, k) logits against integer labels.

    Rows average uniformly by default; row_weights replaces the 1/n factor
    (used to average per sample inside a packed batch).
    """
    labels = np.asarray(labels, dtype=np.int64)
    z = logits.data
    n = z.shape[0]
    w = np.full(n, 1.0 / n) if row_weights is None else np.asarray(row_weights, dtype=np.float64)
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    sm = ez / ez.sum(axis=1, keepdims=True)
    lse = np.log(ez.sum(axis=1)) + zmax[:, 0]
    loss = float(((lse - z[np.arange(n), labels]) * w).sum())

    def backward(g):
        d = sm.copy()
        d[np.arange(n), labels] -= 1.0
        return (d * (g * w)[:, None],)

    return Tensor(loss, (logits,), backward, "softmax_cross_entropy")


def mse(pred: Tensor, target, row_weights=None) -> Tensor:
    """Squared error against a constant target: the grand element mean by
    default, or sum over rows of row_weights[i] * mean_j(diff_ij^2)."""
    t = np.asarray(target, dtype=np.float64)
    diff = pred.data - t
    if row_weights is None:
        loss = float((diff * diff).mean())

        def backward(g):
            return (diff * (2.0 * g / diff.size),)

    else:
        w = np.asarray(row_weights, dtype=np.float64)
        m = diff.shape[1]
        loss = float(((diff * diff).mean(axis=1) * w).sum())

        def backward(g):
            return (diff * (2.0 * g / m) * w[:, None],)

    return Tensor(loss, (pred,), backward, "mse")


def add_scalars(tensors) -> Tensor:
    tensors = list(tensors)
    out = sum(float(t.data) for t in tensors)

    def backward(g):
        return [g for _ in tensors]

    return Tensor(out, tuple(tensors), backward, "add_scalars")
