import numpy as np
import pytest

from symhrec.errors import GeometryError, SymhrecError, TreeError
from symhrec.geometry import Obb, obb_corners, obb_gap_distance, orthonormal_pair
from symhrec.keypoints import axis_side
from symhrec.synthesis import (
    BILATERAL_PLANE,
    GenConfig,
    contract_to_symh,
    convex_hull_2d,
    detect_adjacency,
    detect_symmetry,
    fit_obb,
    generate_aircraft,
    min_area_rect,
    project_keypoints,
    synthesize_sample,
)
from symhrec.tree import (
    Adjacency,
    Leaf,
    Symmetry,
    census,
    flatten_tree,
    iter_preorder,
    serialize_tree,
    validate_tree,
)

EX = np.array([1.0, 0.0, 0.0])
EY = np.array([0.0, 1.0, 0.0])


def cube(center, side=1.0):
    return Obb(np.asarray(center, float), side * np.ones(3), EX, EY)


class TestGenerate:
    def test_deterministic(self):
        cfg = GenConfig()
        a = generate_aircraft(cfg, 5)
        b = generate_aircraft(cfg, 5)
        assert len(a.parts) == len(b.parts)
        for pa, pb in zip(a.parts, b.parts):
            assert pa.label == pb.label
            assert np.array_equal(pa.points, pb.points)

    def test_part_counts(self):
        assert len(generate_aircraft(GenConfig(engine_counts=(2,)), 1).parts) == 8
        assert len(generate_aircraft(GenConfig(engine_counts=(0,)), 1).parts) == 6
        assert len(generate_aircraft(GenConfig(engine_counts=(4,)), 1).parts) == 10

    def test_exact_mirror_symmetry(self):
        parts = generate_aircraft(GenConfig(engine_counts=(4,)), 2).parts
        by_label = {}
        for p in parts:
            by_label.setdefault(p.label, []).append(p.points)
        for left, right in (("wing_left", "wing_right"), ("hstab_left", "hstab_right")):
            mirrored = by_label[right][0].copy()
            mirrored[:, 1] = -mirrored[:, 1]
            assert np.array_equal(by_label[left][0], mirrored)
        engines = by_label["engine"]
        for l, r in ((engines[0], engines[1]), (engines[2], engines[3])):
            m = r.copy()
            m[:, 1] = -m[:, 1]
            assert np.array_equal(l, m)

    def test_point_counts(self):
        cfg = GenConfig()
        for p in generate_aircraft(cfg, 3).parts:
            assert p.points.shape[0] >= 32

    def test_config_validation(self):
        with pytest.raises(SymhrecError):
            GenConfig(fuselage_length=(0.0, 1.0))
        with pytest.raises(SymhrecError):
            GenConfig(engine_counts=(3,))
        with pytest.raises(SymhrecError):
            GenConfig(engine_drop=1.5)


class TestFitObb:
    def test_unit_cube_corners(self):
        pts = np.array([[sx, sy, sz] for sx in (-0.5, 0.5)
                        for sy in (-0.5, 0.5) for sz in (-0.5, 0.5)])
        obb = fit_obb(pts)
        assert np.allclose(obb.extents, 1.0, atol=1e-9)
        assert np.allclose(np.abs(obb.rotation), np.eye(3)[np.argsort(-obb.extents)], atol=1e-9) or \
            np.allclose(np.abs(obb.rotation) @ np.abs(obb.rotation).T, np.eye(3), atol=1e-9)

    def test_box_extents_in_order(self):
        pts = np.array([[sx, sy, sz] for sx in (-2.0, 2.0)
                        for sy in (-1.0, 1.0) for sz in (-0.5, 0.5)])
        obb = fit_obb(pts)
        assert np.allclose(obb.extents, [4.0, 2.0, 1.0], atol=1e-9)

    def test_recovers_rotated_box(self):
        rng = np.random.default_rng(11)
        a1, a2 = orthonormal_pair(rng.normal(size=3), rng.normal(size=3))
        rot = np.stack([a1, a2, np.cross(a1, a2)])
        true_ext = np.array([4.0, 2.0, 1.0])
        local = (rng.random((1000, 3)) - 0.5) * true_ext
        pts = local @ rot + np.array([3.0, -1.0, 2.0])
        obb = fit_obb(pts)
        assert np.all(np.abs(obb.extents - true_ext) / true_ext < 0.05)

    def test_rigid_invariance(self):
        rng = np.random.default_rng(12)
        pts = (rng.random((200, 3)) - 0.5) * np.array([3.0, 1.5, 0.7])
        base = fit_obb(pts)
        a1, a2 = orthonormal_pair(rng.normal(size=3), rng.normal(size=3))
        rot = np.stack([a1, a2, np.cross(a1, a2)])
        t = np.array([1.0, 2.0, 3.0])
        moved = fit_obb(pts @ rot + t)
        expected = obb_corners(base) @ rot + t
        got = obb_corners(moved)
        a = np.asarray(sorted(map(tuple, np.round(expected, 6))))
        b = np.asarray(sorted(map(tuple, np.round(got, 6))))
        assert np.allclose(a, b, atol=1e-6)

    def test_too_few_points(self):
        with pytest.raises(GeometryError):
            fit_obb(np.zeros((3, 3)))

    def test_collinear_points(self):
        pts = np.outer(np.linspace(0, 1, 10), np.array([1.0, 2.0, 3.0]))
        with pytest.raises(GeometryError):
            fit_obb(pts)


class TestDetectAdjacency:
    def test_touching(self):
        assert detect_adjacency([cube((0, 0, 0)), cube((1, 0, 0))], 0.01) == [(0, 1)]

    def test_separated(self):
        assert detect_adjacency([cube((0, 0, 0)), cube((3, 0, 0))], 0.01) == []

    def test_chain_of_three(self):
        obbs = [cube((0, 0, 0)), cube((1, 0, 0)), cube((2, 0, 0))]
        pairs = detect_adjacency(obbs, 0.01)
        # oracle: pairwise gap distances
        expected = [(i, j) for i in range(3) for j in range(i + 1, 3)
                    if obb_gap_distance(obbs[i], obbs[j]) <= 0.01]
        assert pairs == expected == [(0, 1), (1, 2)]

    def test_requires_positive_eps(self):
        with pytest.raises(SymhrecError):
            detect_adjacency([cube((0, 0, 0))], 0.0)


class TestDetectSymmetry:
    def test_mirrored_pair(self):
        obbs = [cube((0, 2, 0)), cube((0, -2, 0))]
        pairs, selfsym = detect_symmetry(obbs, BILATERAL_PLANE, 0.1)
        assert pairs == [(0, 1)] and selfsym == []

    def test_on_plane_self_symmetric(self):
        pairs, selfsym = detect_symmetry([cube((1.0, 0.0, 0.0))], BILATERAL_PLANE, 0.1)
        assert pairs == [] and selfsym == [0]

    def test_perturbed_beyond_tolerance_unpaired(self):
        tol = 0.05
        obbs = [cube((0, 2, 0)), cube((10 * tol, -2, 0))]
        pairs, selfsym = detect_symmetry(obbs, BILATERAL_PLANE, tol)
        assert pairs == [] and selfsym == []


class TestContract:
    def test_three_part_example(self):
        fus = Obb(np.zeros(3), np.array([4.0, 1.0, 1.0]), EX, EY)
        wing_l = cube((0, 1.5, 0))
        wing_r = cube((0, -1.5, 0))
        tree = contract_to_symh([fus, wing_l, wing_r], [(0, 1), (0, 2)], [(1, 2)],
                                BILATERAL_PLANE)
        assert isinstance(tree, Adjacency)
        assert isinstance(tree.left, Leaf) and tree.left.obb == fus
        assert isinstance(tree.right, Symmetry)
        assert tree.right.child.obb == wing_l

    def test_single_part(self):
        tree = contract_to_symh([cube((0, 0, 0))], [], [], BILATERAL_PLANE)
        assert isinstance(tree, Leaf)

    def test_disconnected_names_components(self):
        with pytest.raises(TreeError) as e:
            contract_to_symh([cube((0, 0, 0)), cube((9, 0, 0))], [], [], BILATERAL_PLANE)
        assert "[0]" in str(e.value) and "[1]" in str(e.value)

    def test_eight_part_aircraft(self):
        sample = synthesize_sample(GenConfig(engine_counts=(2,)), seed=4)
        c = census(sample.tree)
        assert c["symmetry"] == 3
        assert len(flatten_tree(sample.tree)) == 8
        assert validate_tree(sample.tree) == []


class TestProjection:
    def test_nose_center_tail_order(self):
        rec = project_keypoints(generate_aircraft(GenConfig(), 6))
        assert rec.nose[0] > rec.fuselage_center[0] > rec.tail[0]

    def test_wing_sides(self):
        rec = project_keypoints(generate_aircraft(GenConfig(), 6))
        assert rec.left_wing.shape == (4, 2) and rec.right_wing.shape == (4, 2)
        assert np.all(rec.left_wing[:, 1] > 0)
        assert np.all(rec.right_wing[:, 1] < 0)

    def test_wing_vertex_order(self):
        rec = project_keypoints(generate_aircraft(GenConfig(), 6))
        il, it, ot, ol = rec.left_wing
        assert abs(il[1]) < abs(ot[1]) and abs(it[1]) < abs(ol[1])
        assert il[0] > it[0] and ol[0] > ot[0]  # leading = toward the nose

    def test_engines_inside_wing_quads(self):
        for seed in range(8):
            rec = project_keypoints(generate_aircraft(GenConfig(engine_counts=(2,)), seed))
            for e in rec.engines:
                side = rec.left_wing if axis_side(rec, e) > 0 else rec.right_wing
                hull = convex_hull_2d(side)
                inside = True
                for k in range(len(hull)):
                    a, b = hull[k], hull[(k + 1) % len(hull)]
                    cross = (b[0] - a[0]) * (e[1] - a[1]) - (b[1] - a[1]) * (e[0] - a[0])
                    inside &= cross >= -1e-9
                assert inside

    def test_missing_fuselage_errors(self):
        parts = generate_aircraft(GenConfig(), 1)
        parts.parts = [p for p in parts.parts if p.label != "fuselage"]
        with pytest.raises(SymhrecError):
            project_keypoints(parts)


class TestMinAreaRect:
    def test_axis_aligned_rectangle(self):
        pts = np.array([[0, 0], [4, 0], [4, 2], [0, 2], [2, 1]], dtype=float)
        center, axes, ext = min_area_rect(pts)
        assert np.allclose(center, [2.0, 1.0])
        assert np.allclose(ext, [4.0, 2.0])
        assert np.allclose(np.abs(axes[0]), [1.0, 0.0])

    def test_rotation_equivariant_area(self):
        rng = np.random.default_rng(5)
        pts = rng.random((40, 2))
        _, _, e0 = min_area_rect(pts)
        theta = 0.7
        rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        _, _, e1 = min_area_rect(pts @ rot.T)
        assert np.prod(e0) == pytest.approx(np.prod(e1), rel=1e-9)

    def test_hull_is_convex_ccw(self):
        rng = np.random.default_rng(6)
        pts = rng.random((60, 2))
        hull = convex_hull_2d(pts)
        n = len(hull)
        for k in range(n):
            a, b, c = hull[k], hull[(k + 1) % n], hull[(k + 2) % n]
            assert (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]) > 0


class TestPipelineInvariants:
    def test_topology_deterministic_per_engine_count(self):
        cfg = GenConfig()
        sigs = {}
        for seed in range(120):
            s = synthesize_sample(cfg, seed)
            sig = "".join(n.kind[0] for n in iter_preorder(s.tree))
            sigs.setdefault(len(s.record.engines), set()).add(sig)
        assert set(sigs) == {0, 2, 4}
        for k, v in sigs.items():
            assert len(v) == 1, f"engine count {k} produced multiple topologies {v}"

    def test_flatten_count_equals_part_count(self):
        for seed in range(30):
            s = synthesize_sample(GenConfig(), seed)
            assert len(flatten_tree(s.tree)) == len(s.parts.parts)

    def test_determinism_of_sample(self):
        a = synthesize_sample(GenConfig(), 9)
        b = synthesize_sample(GenConfig(), 9)
        assert serialize_tree(a.tree) == serialize_tree(b.tree)


def point_in_hull(p, hull, pad=1e-3):
    n = len(hull)
    for k in range(n):
        a, b = hull[k], hull[(k + 1) % n]
        edge = b - a
        out = np.array([edge[1], -edge[0]])
        out /= np.linalg.norm(out)
        if np.dot(p - a, -out) < -pad:
            return False
    return True


def test_end_to_end_pairing():
    """Each keypoint lies inside the union of projected box footprints
    dilated by 1e-3."""
    for seed in range(10):
        s = synthesize_sample(GenConfig(), seed)
        hulls = []
        for obb in flatten_tree(s.tree):
            hulls.append(convex_hull_2d(obb_corners(obb)[:, :2]))
        for _, p in s.record.points():
            assert any(point_in_hull(p, h) for h in hulls), f"seed {seed}: {p} uncovered"
