import itertools
import json

import numpy as np
import pytest

from symhrec.geometry import Obb, reflect_obb
from symhrec.keypoints import KeypointRecord
from symhrec.postprocess import (
    ROLE_ENGINE,
    ROLE_FUSELAGE,
    ROLE_OTHER,
    ROLE_WING_LEFT,
    ROLE_WING_RIGHT,
    assign_roles,
    hungarian,
    match_engines,
    refine,
)
from symhrec.synthesis import GenConfig, fit_obb, generate_aircraft, synthesize_sample
from symhrec.tree import census, flatten_tree, flatten_with_provenance

EX = np.array([1.0, 0.0, 0.0])
EY = np.array([0.0, 1.0, 0.0])


def brute_force_assignment(cost):
    n = cost.shape[0]
    best = None
    for perm in itertools.permutations(range(n)):
        total = sum(cost[i, perm[i]] for i in range(n))
        if best is None or total < best[0]:
            best = (total, perm)
    return best


class TestHungarian:
    def test_one_by_one(self):
        pairs, cost = match_engines([np.zeros(2)], [np.array([3.0, 4.0])])
        assert pairs == [(0, 0)]
        assert cost == pytest.approx(5.0)

    def test_two_by_two_example(self):
        cost = np.array([[0.1, 0.9], [0.8, 0.2]])
        assignment, total = hungarian(cost)
        assert assignment == [0, 1]
        assert total == pytest.approx(0.3)
        bf_total, bf_perm = brute_force_assignment(cost)
        assert total == pytest.approx(bf_total) and tuple(assignment) == bf_perm

    def test_matches_brute_force_6x6(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            cost = rng.random((6, 6))
            _, total = hungarian(cost)
            bf_total, _ = brute_force_assignment(cost)
            assert total == pytest.approx(bf_total, abs=1e-12)

    def test_rectangular_sizes(self):
        rng = np.random.default_rng(1)
        for n_pred, n_kp in ((1, 3), (3, 1), (2, 4), (4, 2)):
            preds = [rng.random(2) for _ in range(n_pred)]
            kps = [rng.random(2) for _ in range(n_kp)]
            pairs, total = match_engines(preds, kps)
            assert len(pairs) == min(n_pred, n_kp)
            used_p = [p for p, _ in pairs]
            used_k = [k for _, k in pairs]
            assert len(set(used_p)) == len(used_p) and len(set(used_k)) == len(used_k)
            # oracle over assignments of the smaller side
            if n_pred <= n_kp:
                best = min(
                    sum(np.linalg.norm(preds[i] - kps[c[i]]) for i in range(n_pred))
                    for c in itertools.permutations(range(n_kp), n_pred)
                )
            else:
                best = min(
                    sum(np.linalg.norm(preds[c[j]] - kps[j]) for j in range(n_kp))
                    for c in itertools.permutations(range(n_pred), n_kp)
                )
            assert total == pytest.approx(best, abs=1e-12)

    def test_empty_sides(self):
        assert match_engines([], [np.zeros(2)]) == ([], 0.0)
        assert match_engines([np.zeros(2)], []) == ([], 0.0)


class TestAssignRoles:
    def test_single_obb_is_fuselage(self):
        roles = assign_roles([Obb(np.zeros(3), np.ones(3), EX, EY)])
        assert roles == [ROLE_FUSELAGE]

    def test_generated_aircraft_roles_match_labels(self):
        agree = 0
        total = 0
        for seed in range(100):
            parts = generate_aircraft(GenConfig(), seed)
            obbs = [fit_obb(p.points) for p in parts.parts]
            roles = assign_roles(obbs)
            for part, role in zip(parts.parts, roles):
                total += 1
                if part.label == "fuselage":
                    agree += role == ROLE_FUSELAGE
                elif part.label == "wing_left":
                    agree += role == ROLE_WING_LEFT
                elif part.label == "wing_right":
                    agree += role == ROLE_WING_RIGHT
                elif part.label == "engine":
                    agree += role == ROLE_ENGINE
                else:
                    agree += role == ROLE_OTHER
        assert agree / total >= 0.95

    def test_no_engine_sized_boxes(self):
        fus = Obb(np.zeros(3), np.array([4.0, 1.0, 1.0]), EX, EY)
        wing_l = Obb(np.array([0.0, 2.0, 0.0]), np.array([3.0, 1.0, 0.2]), EY, EX)
        wing_r = reflect_obb(wing_l, __import__("symhrec.synthesis", fromlist=["BILATERAL_PLANE"]).BILATERAL_PLANE)
        roles = assign_roles([fus, wing_l, wing_r])
        assert ROLE_ENGINE not in roles


class TestRefine:
    def exact_case(self, seed=12, engines=2):
        s = synthesize_sample(GenConfig(engine_counts=(engines,)), seed)
        return s.tree, s.record

    @staticmethod
    def record_from_boxes(tree):
        """Keypoints that are exact projections of the tree's own boxes."""
        boxes = flatten_tree(tree)
        roles = assign_roles(boxes)
        fus = boxes[roles.index(ROLE_FUSELAGE)]
        nose = (fus.center + fus.extents[0] / 2 * fus.axis1)[:2]
        tail = (fus.center - fus.extents[0] / 2 * fus.axis1)[:2]
        if nose[0] < tail[0]:
            nose, tail = tail, nose

        def quad(b):
            c, a1, a2 = b.center[:2], b.axis1[:2], b.axis2[:2]
            corners = [c + s1 * b.extents[0] / 2 * a1 + s2 * b.extents[1] / 2 * a2
                       for s1 in (-1, 1) for s2 in (-1, 1)]
            corners.sort(key=lambda p: abs(p[1]))
            inner = sorted(corners[:2], key=lambda p: -p[0])
            outer = sorted(corners[2:], key=lambda p: p[0])
            return np.stack(inner + outer)

        return KeypointRecord(
            nose=nose, fuselage_center=fus.center[:2].copy(), tail=tail,
            engines=[b.center[:2].copy() for b, r in zip(boxes, roles) if r == ROLE_ENGINE],
            left_wing=quad(boxes[roles.index(ROLE_WING_LEFT)]),
            right_wing=quad(boxes[roles.index(ROLE_WING_RIGHT)]),
        )

    def snap_in_plane(self, tree):
        """Copy of the tree with every leaf's frame snapped exactly in-plane
        (axis3 vertical), so box projections are exact rectangles."""
        from symhrec.tree import map_leaf_obbs

        def snap(o):
            u = o.axis1[:2]
            u = u / np.linalg.norm(u)
            return Obb(o.center, o.extents, np.array([u[0], u[1], 0.0]),
                       np.array([-u[1], u[0], 0.0]))

        return map_leaf_obbs(tree, snap)

    def test_exact_keypoints_reproduce_fuselage(self):
        tree, _ = self.exact_case()
        tree = self.snap_in_plane(tree)
        rec = self.record_from_boxes(tree)
        refined, _ = refine(tree, rec)
        gt_fus = flatten_tree(tree)[0]
        out_fus = flatten_tree(refined)[0]
        assert np.allclose(out_fus.center[:2], gt_fus.center[:2], atol=1e-6)
        assert abs(abs(np.dot(out_fus.axis1, gt_fus.axis1)) - 1.0) < 1e-6
        assert out_fus.extents[0] == pytest.approx(gt_fus.extents[0], abs=1e-6)
        assert out_fus.center[2] == gt_fus.center[2]

    def test_exact_keypoints_reproduce_wings(self):
        tree, _ = self.exact_case(seed=19)
        tree = self.snap_in_plane(tree)
        rec = self.record_from_boxes(tree)
        refined, _ = refine(tree, rec)
        gt = flatten_tree(tree)
        out = flatten_tree(refined)
        roles = assign_roles(gt)
        for i, role in enumerate(roles):
            if role in (ROLE_WING_LEFT, ROLE_WING_RIGHT):
                assert np.allclose(out[i].center[:2], gt[i].center[:2], atol=1e-6)
                assert np.allclose(sorted(out[i].extents[:2]), sorted(gt[i].extents[:2]),
                                   atol=1e-6)

    def test_topology_unchanged(self):
        tree, rec = self.exact_case(seed=13, engines=4)
        refined, _ = refine(tree, rec)
        assert census(refined) == census(tree)

    def test_symmetry_preserved_exactly(self):
        tree, rec = self.exact_case(seed=14)
        refined, _ = refine(tree, rec)
        for inst in flatten_with_provenance(refined):
            back = inst.leaf.obb
            for plane in inst.planes:
                back = reflect_obb(back, plane)
            assert np.allclose(back.to_vector(), inst.obb.to_vector(), atol=1e-12)

    def test_missing_engines_reported(self):
        tree, rec = self.exact_case(seed=15)
        rec_no_eng = KeypointRecord(nose=rec.nose, fuselage_center=rec.fuselage_center,
                                    tail=rec.tail, engines=[],
                                    left_wing=rec.left_wing, right_wing=rec.right_wing)
        before = [o.to_vector() for o in flatten_tree(tree)]
        refined, report = refine(tree, rec_no_eng)
        after = [o.to_vector() for o in flatten_tree(refined)]
        assert any("engine" in s for s in report.skipped)
        # engine boxes untouched
        from symhrec.postprocess import assign_roles as ar
        roles = ar([o for o in flatten_tree(tree)])
        for i, role in enumerate(roles):
            if role == ROLE_ENGINE:
                assert np.allclose(before[i], after[i], atol=1e-12)

    def test_missing_wings_skipped(self):
        tree, rec = self.exact_case(seed=16)
        rec_no_wings = KeypointRecord(nose=rec.nose, fuselage_center=rec.fuselage_center,
                                      tail=rec.tail, engines=rec.engines,
                                      left_wing=None, right_wing=None)
        refined, report = refine(tree, rec_no_wings)
        assert any("wing" in s for s in report.skipped)

    def test_engine_matching_recorded(self):
        tree, rec = self.exact_case(seed=17)
        _, report = refine(tree, rec)
        assert len(report.engine_assignment) == 2
        assert report.engine_cost < 0.05

    def test_report_json(self):
        tree, rec = self.exact_case(seed=18)
        _, report = refine(tree, rec)
        doc = json.loads(report.to_json())
        assert set(doc) == {"roles", "changes", "engine_assignment", "engine_cost", "skipped"}
        assert all(len(c["before"]) == 12 for c in doc["changes"])
