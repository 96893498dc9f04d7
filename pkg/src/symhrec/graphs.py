"""Undirected multi-graph over keypoints: structure-wise edges follow the
aircraft's semantic wiring, spatial-wise edges densely connect everything.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SymhrecError
from .keypoints import (
    TYPE_ENGINE,
    TYPE_FUSELAGE,
    TYPE_INDEX,
    TYPE_NOSE,
    TYPE_TAIL,
    TYPE_WING_LEFT,
    TYPE_WING_RIGHT,
    KeypointRecord,
    axis_side,
    frame_of,
    normalize_record,
)

NODE_FEATURE_DIM = 2 + len(TYPE_INDEX)  # coordinates + type one-hot


@dataclass
class MultiGraph:
    coords: np.ndarray        # (n, 2) in [-1, 1]^2
    types: np.ndarray         # (n,) int, indices into TYPE_ORDER
    struct_edges: np.ndarray  # (e_s, 2) int, i < j
    dense_edges: np.ndarray   # (n(n-1)/2, 2) int, i < j

    @property
    def n_nodes(self):
        return self.coords.shape[0]

    def node_features(self, with_types=True):
        """(n, 8) array: x, y, one-hot type.  with_types=False zeroes the
        one-hot block (the component-type ablation)."""
        n = self.n_nodes
        feats = np.zeros((n, NODE_FEATURE_DIM))
        feats[:, 0:2] = self.coords
        if with_types:
            feats[np.arange(n), 2 + self.types] = 1.0
        return feats


def build_graph(record: KeypointRecord) -> MultiGraph:
    """Build the keypoint multi-graph.

    Coordinates are normalized by the record's bounding square.  Structure
    edges: nose-fuselage, fuselage-tail, fuselage to each wing's two inner
    vertices, and each engine to all four vertices of its own side's wing
    (side = sign of the lateral offset from the nose-tail axis).
    """
    if record.fuselage_center is None:
        raise SymhrecError("record has no fuselage_center keypoint")
    center, scale = frame_of(record)
    norm = normalize_record(record, center, scale)

    points = norm.points()
    coords = np.stack([p for _, p in points])
    types = np.array([TYPE_INDEX[t] for t, _ in points], dtype=np.int64)

    index_of = {}
    wing_nodes = {TYPE_WING_LEFT: [], TYPE_WING_RIGHT: []}
    engine_nodes = []
    for i, (t, _) in enumerate(points):
        if t in (TYPE_NOSE, TYPE_FUSELAGE, TYPE_TAIL):
            index_of[t] = i
        elif t == TYPE_ENGINE:
            engine_nodes.append(i)
        else:
            wing_nodes[t].append(i)

    edges = []
    fus = index_of[TYPE_FUSELAGE]
    if TYPE_NOSE in index_of:
        edges.append((index_of[TYPE_NOSE], fus))
    if TYPE_TAIL in index_of:
        edges.append((fus, index_of[TYPE_TAIL]))
    for side in (TYPE_WING_LEFT, TYPE_WING_RIGHT):
        nodes = wing_nodes[side]
        if nodes:
            # wing vertices are ordered inner first by construction
            edges.append((fus, nodes[0]))
            edges.append((fus, nodes[1]))
    if engine_nodes and norm.nose is not None and norm.tail is not None:
        for e in engine_nodes:
            side = TYPE_WING_LEFT if axis_side(norm, coords[e]) > 0 else TYPE_WING_RIGHT
            for w in wing_nodes[side]:
                edges.append((e, w))

    struct = np.array(
        sorted(tuple(sorted(e)) for e in edges), dtype=np.int64
    ).reshape(-1, 2)
    n = coords.shape[0]
    dense = np.array(
        [(i, j) for i in range(n) for j in range(i + 1, n)], dtype=np.int64
    ).reshape(-1, 2)
    return MultiGraph(coords=coords, types=types, struct_edges=struct, dense_edges=dense)


def directed_struct_edges(graph: MultiGraph):
    """(receiver, sender) index arrays covering both orientations of every
    structure edge."""
    e = graph.struct_edges
    if e.shape[0] == 0:
        z = np.zeros(0, dtype=np.int64)
        return z, z
    recv = np.concatenate([e[:, 0], e[:, 1]])
    send = np.concatenate([e[:, 1], e[:, 0]])
    return recv, send


@dataclass
class GraphBatch:
    """Several graphs packed block-diagonally for one forward pass.  Node
    rows stay grouped per graph, so per-graph reductions are contiguous."""

    feats: np.ndarray        # (n_total, 8)
    node_starts: np.ndarray  # (b,) first row of each graph
    node_graph: np.ndarray   # (n_total,) graph id per row
    n_graphs: int
    recv: np.ndarray         # consolidated directed structure edges
    send: np.ndarray


def make_batch(graphs, with_types=True) -> GraphBatch:
    feats = []
    starts = []
    node_graph = []
    recv_all = []
    send_all = []
    offset = 0
    for gi, g in enumerate(graphs):
        feats.append(g.node_features(with_types=with_types))
        starts.append(offset)
        node_graph.append(np.full(g.n_nodes, gi, dtype=np.int64))
        recv, send = directed_struct_edges(g)
        recv_all.append(recv + offset)
        send_all.append(send + offset)
        offset += g.n_nodes
    return GraphBatch(
        feats=np.concatenate(feats),
        node_starts=np.asarray(starts, dtype=np.int64),
        node_graph=np.concatenate(node_graph),
        n_graphs=len(graphs),
        recv=np.concatenate(recv_all),
        send=np.concatenate(send_all),
    )


def dump_edges(graph: MultiGraph) -> str:
    """Plain-text edge list for inspection."""
    lines = [f"nodes {graph.n_nodes}"]
    for i, j in graph.struct_edges:
        lines.append(f"s {i} {j}")
    for i, j in graph.dense_edges:
        lines.append(f"p {i} {j}")
    return "\n".join(lines) + "\n"
