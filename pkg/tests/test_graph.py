import numpy as np
import pytest

from symhrec.errors import SymhrecError
from symhrec.graphs import build_graph, directed_struct_edges, dump_edges, make_batch
from symhrec.keypoints import TYPE_INDEX, KeypointRecord
from symhrec.synthesis import GenConfig, synthesize_sample


def body_only_record():
    return KeypointRecord(nose=np.array([1.0, 0.0]), fuselage_center=np.zeros(2),
                          tail=np.array([-1.0, 0.0]))


def full_record(engines=2):
    return synthesize_sample(GenConfig(engine_counts=(engines,)), seed=8).record


def edge_set(edges):
    return {tuple(e) for e in edges}


class TestBuildGraph:
    def test_body_only_counts(self):
        g = build_graph(body_only_record())
        assert g.n_nodes == 3
        assert len(g.struct_edges) == 2
        assert len(g.dense_edges) == 3

    def test_full_record_counts(self):
        g = build_graph(full_record(engines=2))
        assert g.n_nodes == 13
        # nose-fus, fus-tail, 2x fus-inner per wing, 4x engine-wing per engine
        assert len(g.struct_edges) == 2 + 2 + 2 + 4 + 4
        assert len(g.dense_edges) == 13 * 12 // 2

    def test_engines_dropped_other_edges_unchanged(self):
        rec = full_record(engines=2)
        no_eng = KeypointRecord(nose=rec.nose, fuselage_center=rec.fuselage_center,
                                tail=rec.tail, engines=[],
                                left_wing=rec.left_wing, right_wing=rec.right_wing)
        g_full = build_graph(rec)
        g_drop = build_graph(no_eng)
        assert g_drop.n_nodes == 11
        assert len(g_drop.struct_edges) == 6
        # the non-engine edges survive under the node reindexing (engines
        # occupied indices 3-4, wing vertices shift down by 2)
        kept = {(i if i < 3 else i - 2, j if j < 3 else j - 2)
                for i, j in edge_set(g_full.struct_edges)
                if i not in (3, 4) and j not in (3, 4)}
        assert kept == edge_set(g_drop.struct_edges)

    def test_four_engines_connect_to_own_side(self):
        rec = full_record(engines=4)
        g = build_graph(rec)
        assert g.n_nodes == 15
        assert len(g.struct_edges) == 2 + 4 + 16
        types = g.types
        left_wing = [i for i in range(15) if types[i] == TYPE_INDEX["wing_vertex_left"]]
        for e in range(15):
            if types[e] != TYPE_INDEX["engine"]:
                continue
            partners = [j for i, j in g.struct_edges if i == e] + \
                       [i for i, j in g.struct_edges if j == e]
            side = set(types[p] for p in partners)
            assert len(side) == 1  # all four partners on one wing
            expected = TYPE_INDEX["wing_vertex_left"] if g.coords[e, 1] > 0 \
                else TYPE_INDEX["wing_vertex_right"]
            assert side == {expected}
            assert len(partners) == 4

    def test_normalized_coordinates(self):
        g = build_graph(full_record())
        assert g.coords.min() >= -1.0 - 1e-12
        assert g.coords.max() <= 1.0 + 1e-12

    def test_normalization_idempotent(self):
        from symhrec.keypoints import frame_of, normalize_record

        rec = full_record()
        g1 = build_graph(rec)
        g2 = build_graph(normalize_record(rec, *frame_of(rec)))
        assert np.max(np.abs(g1.coords - g2.coords)) < 1e-12

    def test_missing_fuselage_center_errors(self):
        rec = body_only_record()
        rec.fuselage_center = None
        with pytest.raises(SymhrecError):
            build_graph(rec)

    def test_permutation_covariance(self):
        # engine order is the free ordering in a record; swapping engines
        # must permute node indices consistently in both edge sets
        rec = full_record(engines=2)
        swapped = KeypointRecord(nose=rec.nose, fuselage_center=rec.fuselage_center,
                                 tail=rec.tail, engines=[rec.engines[1], rec.engines[0]],
                                 left_wing=rec.left_wing, right_wing=rec.right_wing)
        g1 = build_graph(rec)
        g2 = build_graph(swapped)
        perm = {i: i for i in range(13)}
        perm[3], perm[4] = 4, 3
        remap = {tuple(sorted((perm[i], perm[j]))) for i, j in g1.struct_edges}
        assert remap == edge_set(g2.struct_edges)
        assert np.allclose(g1.coords[3], g2.coords[4])

    def test_node_features_shape_and_onehot(self):
        g = build_graph(full_record())
        feats = g.node_features()
        assert feats.shape == (13, 8)
        assert np.all(feats[:, 2:].sum(axis=1) == 1.0)
        untyped = g.node_features(with_types=False)
        assert np.all(untyped[:, 2:] == 0.0)
        assert np.array_equal(untyped[:, :2], feats[:, :2])

    def test_dump_edges(self):
        text = dump_edges(build_graph(body_only_record()))
        assert text.startswith("nodes 3\n")
        assert "s 0 1" in text and "p 0 2" in text


class TestBatching:
    def test_block_diagonal_offsets(self):
        g1 = build_graph(body_only_record())
        g2 = build_graph(full_record())
        batch = make_batch([g1, g2])
        assert batch.feats.shape[0] == g1.n_nodes + g2.n_nodes
        assert list(batch.node_starts) == [0, 3]
        assert batch.recv.min() >= 0
        r1, _ = directed_struct_edges(g1)
        assert np.array_equal(batch.recv[: r1.size], r1)
        assert batch.recv[r1.size :].min() >= g1.n_nodes
