"""Dual-stream graph encoder and recursive tree decoder.

The structure stream updates each node from a linear self-map plus the mean
of messages computed from (own feature, neighbor difference) pairs along
structure edges.  The spatial stream averages a shared transform of every
node (including self) over the dense edges.  Per-timestep features are
concatenated, projected per branch, max-pooled (structure) and mean-pooled
(spatial), and concatenated into one d-dim root code.

The decoder classifies each code into leaf / adjacency / symmetry and
applies the matching head; training follows the ground-truth tree (teacher
forcing), inference follows the classifier with a depth cap.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import SymhrecError
from .geometry import Obb, SymmetryParam
from .graphs import GraphBatch, MultiGraph, directed_struct_edges
from .keypoints import TYPE_INDEX
from .tree import (
    KIND_LABELS,
    Adjacency,
    Leaf,
    Symmetry,
    SymhNode,
    census,
)

INPUT_DIM = 2 + len(TYPE_INDEX)


@dataclass
class Linear:
    W: Tensor
    b: Tensor


@dataclass
class BatchNorm:
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5


@dataclass
class Mlp:
    """Two fully connected layers with a tanh hidden activation."""

    fc1: Linear
    fc2: Linear


class ModelParams:
    """All learnable tensors, created in a fixed order from one seed."""

    def __init__(self, d: int = 80, T: int = 3, hidden: int = 200, seed: int = 0):
        if d % 2 != 0:
            raise SymhrecError("feature dimension d must be even")
        if T < 1:
            raise SymhrecError("message passing steps T must be >= 1")
        self.d = d
        self.T = T
        self.hidden = hidden
        self.seed = seed
        rng = np.random.default_rng(seed)

        def linear(fan_in, fan_out):
            limit = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            return Linear(Tensor(w), Tensor(np.zeros(fan_out)))

        def bn(dim):
            return BatchNorm(Tensor(np.ones(dim)), Tensor(np.zeros(dim)),
                             np.zeros(dim), np.ones(dim))

        self.embed = linear(INPUT_DIM, d)
        self.struct_lin = [linear(d, d) for _ in range(T)]
        self.struct_fc1 = [linear(2 * d, d) for _ in range(T)]
        self.struct_bn = [bn(d) for _ in range(T)]
        self.struct_fc2 = [linear(d, d) for _ in range(T)]
        self.spatial_fc = [linear(d, d) for _ in range(T)]
        self.spatial_bn = [bn(d) for _ in range(T)]
        trace = (T + 1) * d
        self.f1_fc = linear(trace, d)
        self.f1_bn = bn(d)
        self.g1 = linear(d + trace, d // 2)
        self.f2_fc = linear(trace, d)
        self.f2_bn = bn(d)
        self.g2 = linear(d + trace, d // 2)
        self.cls = Mlp(linear(d, hidden), linear(hidden, 3))
        self.adj = Mlp(linear(d, hidden), linear(hidden, 2 * d))
        self.sym = Mlp(linear(d, hidden), linear(hidden, d + 6))
        self.obb = Mlp(linear(d, hidden), linear(hidden, 12))

    def _layers(self):
        out = [("embed", self.embed)]
        for t in range(self.T):
            out.append((f"struct.{t}.lin", self.struct_lin[t]))
            out.append((f"struct.{t}.msg_fc1", self.struct_fc1[t]))
            out.append((f"struct.{t}.msg_bn", self.struct_bn[t]))
            out.append((f"struct.{t}.msg_fc2", self.struct_fc2[t]))
        for t in range(self.T):
            out.append((f"spatial.{t}.fc", self.spatial_fc[t]))
            out.append((f"spatial.{t}.bn", self.spatial_bn[t]))
        out.extend([
            ("readout.f1_fc", self.f1_fc), ("readout.f1_bn", self.f1_bn),
            ("readout.g1", self.g1),
            ("readout.f2_fc", self.f2_fc), ("readout.f2_bn", self.f2_bn),
            ("readout.g2", self.g2),
            ("dec.cls.fc1", self.cls.fc1), ("dec.cls.fc2", self.cls.fc2),
            ("dec.adj.fc1", self.adj.fc1), ("dec.adj.fc2", self.adj.fc2),
            ("dec.sym.fc1", self.sym.fc1), ("dec.sym.fc2", self.sym.fc2),
            ("dec.obb.fc1", self.obb.fc1), ("dec.obb.fc2", self.obb.fc2),
        ])
        return out

    def named_tensors(self):
        for name, layer in self._layers():
            if isinstance(layer, Linear):
                yield f"{name}.W", layer.W
                yield f"{name}.b", layer.b
            else:
                yield f"{name}.gamma", layer.gamma
                yield f"{name}.beta", layer.beta

    def buffer_arrays(self):
        for name, layer in self._layers():
            if isinstance(layer, BatchNorm):
                yield f"{name}.running_mean", layer.running_mean
                yield f"{name}.running_var", layer.running_var

    def set_buffer(self, name, value):
        for bname, layer in self._layers():
            if isinstance(layer, BatchNorm):
                if name == f"{bname}.running_mean":
                    layer.running_mean = np.array(value, dtype=np.float64)
                    return
                if name == f"{bname}.running_var":
                    layer.running_var = np.array(value, dtype=np.float64)
                    return
        raise KeyError(name)

    def zero_grads(self):
        for _, t in self.named_tensors():
            t.grad = None


def apply_linear(lin: Linear, x: Tensor) -> Tensor:
    return ad.linear(x, lin.W, lin.b)


def apply_bn(bn: BatchNorm, x: Tensor, training: bool, updates=None) -> Tensor:
    if training:
        out, mu, var = ad.batchnorm(x, bn.gamma, bn.beta, bn.eps)
        if updates is not None:
            updates.append((bn, mu, var))
        return out
    return ad.batchnorm_eval(x, bn.gamma, bn.beta, bn.running_mean, bn.running_var, bn.eps)


def commit_bn_updates(updates, momentum: float = 0.1):
    """Fold collected batch statistics into running averages."""
    for bn, mu, var in updates:
        bn.running_mean = (1.0 - momentum) * bn.running_mean + momentum * mu
        bn.running_var = (1.0 - momentum) * bn.running_var + momentum * var


def apply_mlp(mlp: Mlp, x: Tensor) -> Tensor:
    return apply_linear(mlp.fc2, ad.tanh(apply_linear(mlp.fc1, x)))


def _mlp_np(mlp: Mlp, x: np.ndarray) -> np.ndarray:
    h = np.tanh(x @ mlp.fc1.W.data + mlp.fc1.b.data)
    return h @ mlp.fc2.W.data + mlp.fc2.b.data


@dataclass
class EncodeResult:
    r: Tensor                 # (1, d) root code
    struct_trace: list        # h^0 .. h^T, each (n, d)
    spatial_trace: list       # z^0 .. z^T


def encode(graph: MultiGraph, params: ModelParams, training: bool = False,
           updates=None, type_features: bool = True) -> EncodeResult:
    """Run both streams and fuse into the root code."""
    n = graph.n_nodes
    if n < 1:
        raise SymhrecError("graph has no nodes")
    feats = Tensor(graph.node_features(with_types=type_features))
    h0 = apply_linear(params.embed, feats)

    recv, send = directed_struct_edges(graph)
    n_edges = recv.size
    if n_edges:
        # constant gather / mean-aggregation matrices keep the message
        # block inside BLAS
        gather_recv = np.zeros((n_edges, n))
        gather_send = np.zeros((n_edges, n))
        gather_recv[np.arange(n_edges), recv] = 1.0
        gather_send[np.arange(n_edges), send] = 1.0
        counts = np.maximum(np.bincount(recv, minlength=n), 1)
        mean_recv = gather_recv.T / counts[:, None]

    hs = [h0]
    for t in range(params.T):
        h = hs[-1]
        base = apply_linear(params.struct_lin[t], h)
        if n_edges:
            hi = ad.project(gather_recv, h)
            hj = ad.project(gather_send, h)
            diff = ad.add(hj, ad.scale(hi, -1.0))
            m = ad.relu(apply_linear(params.struct_fc1[t], ad.concat([hi, diff], axis=1)))
            m = apply_bn(params.struct_bn[t], m, training, updates)
            m = apply_linear(params.struct_fc2[t], m)
            base = ad.add(base, ad.project(mean_recv, m))
        hs.append(base)

    zs = [h0]
    for t in range(params.T):
        p = ad.relu(apply_linear(params.spatial_fc[t], zs[-1]))
        p = apply_bn(params.spatial_bn[t], p, training, updates)
        zs.append(ad.tile_rows(ad.mean_rows(p), n))

    rs = ad.concat(hs, axis=1)
    rp = ad.concat(zs, axis=1)
    f1 = apply_bn(params.f1_bn, ad.relu(apply_linear(params.f1_fc, rs)), training, updates)
    f2 = apply_bn(params.f2_bn, ad.relu(apply_linear(params.f2_fc, rp)), training, updates)
    pooled_s = ad.max_rows(apply_linear(params.g1, ad.concat([f1, rs], axis=1)))
    pooled_p = ad.mean_rows(apply_linear(params.g2, ad.concat([f2, rp], axis=1)))
    r = ad.concat([pooled_s, pooled_p], axis=1)
    return EncodeResult(r=r, struct_trace=[t.data for t in hs], spatial_trace=[t.data for t in zs])


@dataclass
class TeacherForcedOutput:
    logits: Tensor            # (n_nodes, 3), pre-order
    labels: np.ndarray        # (n_nodes,) ground-truth kind indices
    obb_pred: Tensor          # (n_leaves, 12)
    obb_target: np.ndarray
    sym_pred: Optional[Tensor]  # (n_sym, 6) or None when the tree has none
    sym_target: Optional[np.ndarray]


def decode_teacher_forced(r: Tensor, gt_tree: SymhNode, params: ModelParams) -> TeacherForcedOutput:
    """Decode along the ground-truth topology, emitting classifier logits at
    every node and the head output the true kind demands.

    The adjacency/symmetry heads run per node (their outputs feed the
    recursion); the classifier and box heads run once on the stacked codes.
    """
    codes = []
    labels = []
    leaf_codes = []
    obb_target = []
    sym_pred = []
    sym_target = []

    def walk(code, node):
        codes.append(code)
        labels.append(KIND_LABELS[node.kind])
        if isinstance(node, Leaf):
            leaf_codes.append(code)
            obb_target.append(node.obb.to_vector())
        elif isinstance(node, Adjacency):
            both = apply_mlp(params.adj, code)
            walk(ad.narrow(both, 0, params.d), node.left)
            walk(ad.narrow(both, params.d, params.d), node.right)
        elif isinstance(node, Symmetry):
            out = apply_mlp(params.sym, code)
            sym_pred.append(ad.narrow(out, params.d, 6))
            sym_target.append(node.param.canonical().to_vector())
            walk(ad.narrow(out, 0, params.d), node.child)
        else:
            raise SymhrecError(f"unknown node type {type(node).__name__}")

    walk(r, gt_tree)
    return TeacherForcedOutput(
        logits=apply_mlp(params.cls, ad.concat(codes, axis=0)),
        labels=np.array(labels, dtype=np.int64),
        obb_pred=apply_mlp(params.obb, ad.concat(leaf_codes, axis=0)),
        obb_target=np.stack(obb_target),
        sym_pred=ad.concat(sym_pred, axis=0) if sym_pred else None,
        sym_target=np.stack(sym_target) if sym_target else None,
    )


def loss_from_outputs(out: TeacherForcedOutput, weights=(1.0, 1.0, 1.0)):
    """Weighted cross-entropy + squared-error loss.

    Returns (loss tensor, per-term breakdown dict).  Each term is averaged
    within its own type before weighting.
    """
    w_cls, w_sym, w_obb = (float(w) for w in weights)
    ce = ad.softmax_cross_entropy(out.logits, out.labels)
    obb = ad.mse(out.obb_pred, out.obb_target)
    terms = [ad.scale(ce, w_cls), ad.scale(obb, w_obb)]
    breakdown = {"cls": ce.item(), "obb": obb.item(), "sym": 0.0}
    if out.sym_pred is not None:
        sym = ad.mse(out.sym_pred, out.sym_target)
        terms.append(ad.scale(sym, w_sym))
        breakdown["sym"] = sym.item()
    total = ad.add_scalars(terms)
    breakdown["total"] = total.item()
    return total, breakdown


def loss(out: TeacherForcedOutput, gt_tree: SymhNode, weights=(1.0, 1.0, 1.0)):
    """loss_from_outputs with an alignment check against the tree census."""
    c = census(gt_tree)
    n_nodes = sum(c.values())
    if out.labels.shape[0] != n_nodes or out.obb_pred.shape[0] != c["leaf"]:
        raise SymhrecError(
            f"prediction/ground-truth mismatch: {out.labels.shape[0]} vs {n_nodes} nodes"
        )
    n_sym = 0 if out.sym_pred is None else out.sym_pred.shape[0]
    if n_sym != c["symmetry"]:
        raise SymhrecError(f"symmetry outputs {n_sym} != census {c['symmetry']}")
    return loss_from_outputs(out, weights)


def decode_free(r, params: ModelParams, max_depth: int = 16) -> SymhNode:
    """Decode driven by the classifier's argmax; nodes at the depth cap are
    forced to leaves so the recursion always terminates with a valid tree."""
    if max_depth < 1:
        raise SymhrecError("max_depth must be >= 1")
    code = r.data if isinstance(r, Tensor) else np.asarray(r, dtype=np.float64)
    code = code.reshape(1, -1)

    def walk(c, depth_):
        kind = int(np.argmax(_mlp_np(params.cls, c)[0]))
        if depth_ >= max_depth:
            kind = KIND_LABELS["leaf"]
        if kind == KIND_LABELS["adjacency"]:
            both = _mlp_np(params.adj, c)
            return Adjacency(
                walk(both[:, : params.d], depth_ + 1),
                walk(both[:, params.d :], depth_ + 1),
            )
        if kind == KIND_LABELS["symmetry"]:
            out = _mlp_np(params.sym, c)
            param = SymmetryParam.from_vector(out[0, params.d :])
            return Symmetry(walk(out[:, : params.d], depth_ + 1), param)
        return Leaf(Obb.from_vector(_mlp_np(params.obb, c)[0]))

    return walk(code, 1)


def forward_loss(graph: MultiGraph, gt_tree: SymhNode, params: ModelParams,
                 weights=(1.0, 1.0, 1.0), training: bool = True, updates=None,
                 type_features: bool = True):
    """Encoder + teacher-forced decoder + loss in one call."""
    enc = encode(graph, params, training=training, updates=updates,
                 type_features=type_features)
    out = decode_teacher_forced(enc.r, gt_tree, params)
    return loss_from_outputs(out, weights)


# -- packed-batch path ---------------------------------------------------------
#
# Training packs the whole batch into one block-diagonal forward so batch
# normalization sees genuine batch statistics (per-sample statistics do not
# transfer to running-average inference).  The math per sample is otherwise
# identical to the per-sample functions above, and the loss is the mean of
# the per-sample losses.


def encode_batch(batch: GraphBatch, params: ModelParams, training: bool = False,
                 updates=None) -> Tensor:
    """Root codes (b, d) for a packed batch."""
    n = batch.feats.shape[0]
    h0 = apply_linear(params.embed, Tensor(batch.feats))

    n_edges = batch.recv.size
    if n_edges:
        recv_scatter = ad.RowScatter(batch.recv, n)
        send_scatter = ad.RowScatter(batch.send, n)
    graph_scatter = ad.RowScatter(batch.node_graph, batch.n_graphs)

    hs = [h0]
    for t in range(params.T):
        h = hs[-1]
        base = apply_linear(params.struct_lin[t], h)
        if n_edges:
            hi = ad.gather_rows(h, batch.recv, recv_scatter)
            hj = ad.gather_rows(h, batch.send, send_scatter)
            diff = ad.add(hj, ad.scale(hi, -1.0))
            m = ad.relu(apply_linear(params.struct_fc1[t], ad.concat([hi, diff], axis=1)))
            m = apply_bn(params.struct_bn[t], m, training, updates)
            m = apply_linear(params.struct_fc2[t], m)
            base = ad.add(base, ad.scatter_mean(m, recv_scatter))
        hs.append(base)

    zs = [h0]
    for t in range(params.T):
        p = ad.relu(apply_linear(params.spatial_fc[t], zs[-1]))
        p = apply_bn(params.spatial_bn[t], p, training, updates)
        per_graph = ad.segment_mean_contig(p, batch.node_starts, batch.node_graph)
        zs.append(ad.gather_rows(per_graph, batch.node_graph, graph_scatter))

    rs = ad.concat(hs, axis=1)
    rp = ad.concat(zs, axis=1)
    f1 = apply_bn(params.f1_bn, ad.relu(apply_linear(params.f1_fc, rs)), training, updates)
    f2 = apply_bn(params.f2_bn, ad.relu(apply_linear(params.f2_fc, rp)), training, updates)
    pooled_s = ad.segment_max_contig(apply_linear(params.g1, ad.concat([f1, rs], axis=1)),
                                     batch.node_starts)
    pooled_p = ad.segment_mean_contig(apply_linear(params.g2, ad.concat([f2, rp], axis=1)),
                                      batch.node_starts, batch.node_graph)
    return ad.concat([pooled_s, pooled_p], axis=1)


@dataclass
class BatchDecodeOutput:
    logits: Tensor
    labels: np.ndarray
    node_weights: np.ndarray
    obb_pred: Tensor
    obb_target: np.ndarray
    obb_weights: np.ndarray
    sym_pred: Optional[Tensor]
    sym_target: Optional[np.ndarray]
    sym_weights: Optional[np.ndarray]


def decode_teacher_forced_batch(r_batch: Tensor, trees, params: ModelParams) -> BatchDecodeOutput:
    """Teacher forcing over a whole batch, level-synchronous: at each depth
    all adjacency heads run as one call and all symmetry heads as another.
    Per-node weights reproduce each sample's own within-type averaging."""
    b = len(trees)
    counts = [census(t) for t in trees]
    inv_nodes = [1.0 / (b * sum(c.values())) for c in counts]
    inv_leaves = [1.0 / (b * c["leaf"]) for c in counts]
    inv_syms = [1.0 / (b * c["symmetry"]) if c["symmetry"] else 0.0 for c in counts]

    level_codes = []
    labels = []
    node_weights = []
    leaf_parts = []     # (tensor, rows, sample ids, targets)
    sym_parts = []

    frontier = r_batch
    meta = [(i, trees[i]) for i in range(b)]
    while meta:
        level_codes.append(frontier)
        adj_rows, sym_rows, leaf_rows = [], [], []
        for row, (si, node) in enumerate(meta):
            labels.append(KIND_LABELS[node.kind])
            node_weights.append(inv_nodes[si])
            if isinstance(node, Adjacency):
                adj_rows.append(row)
            elif isinstance(node, Symmetry):
                sym_rows.append(row)
            elif isinstance(node, Leaf):
                leaf_rows.append(row)
            else:
                raise SymhrecError(f"unknown node type {type(node).__name__}")
        if leaf_rows:
            leaf_parts.append((
                ad.take_rows(frontier, leaf_rows),
                [meta[r][0] for r in leaf_rows],
                [meta[r][1].obb.to_vector() for r in leaf_rows],
            ))
        next_parts = []
        next_meta = []
        if adj_rows:
            both = apply_mlp(params.adj, ad.take_rows(frontier, adj_rows))
            next_parts.append(ad.narrow(both, 0, params.d))
            next_meta.extend((meta[r][0], meta[r][1].left) for r in adj_rows)
            next_parts.append(ad.narrow(both, params.d, params.d))
            next_meta.extend((meta[r][0], meta[r][1].right) for r in adj_rows)
        if sym_rows:
            out = apply_mlp(params.sym, ad.take_rows(frontier, sym_rows))
            sym_parts.append((
                ad.narrow(out, params.d, 6),
                [meta[r][0] for r in sym_rows],
                [meta[r][1].param.canonical().to_vector() for r in sym_rows],
            ))
            next_parts.append(ad.narrow(out, 0, params.d))
            next_meta.extend((meta[r][0], meta[r][1].child) for r in sym_rows)
        if not next_parts:
            break
        frontier = next_parts[0] if len(next_parts) == 1 else ad.concat(next_parts, axis=0)
        meta = next_meta

    obb_pred = apply_mlp(params.obb, ad.concat([p[0] for p in leaf_parts], axis=0))
    obb_sids = [s for p in leaf_parts for s in p[1]]
    obb_target = np.stack([t for p in leaf_parts for t in p[2]])
    out = BatchDecodeOutput(
        logits=apply_mlp(params.cls, ad.concat(level_codes, axis=0)),
        labels=np.asarray(labels, dtype=np.int64),
        node_weights=np.asarray(node_weights),
        obb_pred=obb_pred,
        obb_target=obb_target,
        obb_weights=np.asarray([inv_leaves[s] for s in obb_sids]),
        sym_pred=None,
        sym_target=None,
        sym_weights=None,
    )
    if sym_parts:
        out.sym_pred = ad.concat([p[0] for p in sym_parts], axis=0)
        out.sym_target = np.stack([t for p in sym_parts for t in p[2]])
        sym_sids = [s for p in sym_parts for s in p[1]]
        out.sym_weights = np.asarray([inv_syms[s] for s in sym_sids])
    return out


def batch_loss(out: BatchDecodeOutput, weights=(1.0, 1.0, 1.0)):
    """Mean over the batch of the per-sample weighted losses."""
    w_cls, w_sym, w_obb = (float(w) for w in weights)
    ce = ad.softmax_cross_entropy(out.logits, out.labels, row_weights=out.node_weights)
    obb = ad.mse(out.obb_pred, out.obb_target, row_weights=out.obb_weights)
    terms = [ad.scale(ce, w_cls), ad.scale(obb, w_obb)]
    breakdown = {"cls": ce.item(), "obb": obb.item(), "sym": 0.0}
    if out.sym_pred is not None:
        sym = ad.mse(out.sym_pred, out.sym_target, row_weights=out.sym_weights)
        terms.append(ad.scale(sym, w_sym))
        breakdown["sym"] = sym.item()
    total = ad.add_scalars(terms)
    breakdown["total"] = total.item()
    return total, breakdown
