import numpy as np
import pytest

from symhrec.errors import SymhrecError
from symhrec.keypoints import (
    KeypointRecord,
    axis_side,
    frame_of,
    load_record,
    normalize_record,
    perturb_record,
    record_from_json,
    record_to_json,
    save_record,
    validate_record,
)
from symhrec.synthesis import GenConfig


def sample_record(engines=2):
    from symhrec.synthesis import synthesize_sample

    return synthesize_sample(GenConfig(engine_counts=(engines,)), seed=3).record


class TestRecordBasics:
    def test_points_order(self):
        rec = sample_record()
        types = [t for t, _ in rec.points()]
        assert types[:3] == ["nose", "fuselage_center", "tail"]
        assert types.count("engine") == 2
        assert types.count("wing_vertex_left") == 4
        assert types.count("wing_vertex_right") == 4

    def test_validate_clean(self):
        assert validate_record(sample_record()) == []

    def test_validate_flags_side_swap(self):
        rec = sample_record()
        swapped = KeypointRecord(
            nose=rec.nose, fuselage_center=rec.fuselage_center, tail=rec.tail,
            engines=rec.engines, left_wing=rec.right_wing, right_wing=rec.left_wing,
        )
        issues = validate_record(swapped)
        assert any(i.startswith("side:") for i in issues)

    def test_validate_flags_nose_equals_tail(self):
        rec = KeypointRecord(nose=np.zeros(2), fuselage_center=np.ones(2),
                             tail=np.zeros(2))
        assert any("nose equals tail" in i for i in validate_record(rec))

    def test_axis_side_sign(self):
        rec = KeypointRecord(nose=np.array([1.0, 0.0]), fuselage_center=np.zeros(2),
                             tail=np.array([-1.0, 0.0]))
        assert axis_side(rec, np.array([0.0, 0.5])) > 0   # +y is the left side
        assert axis_side(rec, np.array([0.0, -0.5])) < 0

    def test_bad_wing_shape_rejected(self):
        with pytest.raises(SymhrecError):
            KeypointRecord(nose=np.zeros(2), fuselage_center=np.ones(2),
                           tail=2 * np.ones(2), left_wing=np.zeros((3, 2)))


class TestJson:
    def test_round_trip(self, tmp_path):
        rec = sample_record(engines=4)
        path = tmp_path / "kp.json"
        save_record(rec, path)
        again = load_record(path)
        assert np.allclose(again.nose, rec.nose)
        assert np.allclose(again.left_wing, rec.left_wing)
        assert len(again.engines) == 4
        assert save_record(again, tmp_path / "kp2.json") is None
        assert (tmp_path / "kp.json").read_text() == (tmp_path / "kp2.json").read_text()

    def test_type_tags_present(self):
        text = record_to_json(sample_record())
        for tag in ("nose", "fuselage_center", "tail", "engine",
                    "wing_vertex_left", "wing_vertex_right"):
            assert f'"type": "{tag}"' in text

    def test_rejects_unknown_format(self):
        with pytest.raises(SymhrecError):
            record_from_json('{"format": "something else"}')

    def test_wingless_record(self):
        rec = KeypointRecord(nose=np.array([1.0, 0.0]), fuselage_center=np.zeros(2),
                             tail=np.array([-1.0, 0.0]))
        again = record_from_json(record_to_json(rec))
        assert again.left_wing is None and again.engines == []


class TestPerturb:
    def test_zero_noise_is_identity(self):
        rec = sample_record()
        out = perturb_record(rec, 0.0, 0.0, seed=9)
        assert np.array_equal(out.nose, rec.nose)
        assert np.array_equal(out.left_wing, rec.left_wing)
        assert len(out.engines) == len(rec.engines)
        for a, b in zip(out.engines, rec.engines):
            assert np.array_equal(a, b)

    def test_full_drop_removes_all_engines(self):
        out = perturb_record(sample_record(engines=4), 0.0, 1.0, seed=1)
        assert out.engines == []

    def test_body_points_never_dropped(self):
        for seed in range(20):
            out = perturb_record(sample_record(), 0.05, 1.0, seed=seed)
            assert out.nose is not None and out.tail is not None
            assert out.fuselage_center is not None

    def test_deterministic(self):
        rec = sample_record()
        a = perturb_record(rec, 0.01, 0.5, seed=42)
        b = perturb_record(rec, 0.01, 0.5, seed=42)
        assert np.array_equal(a.nose, b.nose)
        assert len(a.engines) == len(b.engines)

    def test_displacement_statistic(self):
        # mean |dx| of N(0, sigma) is sigma * sqrt(2/pi)
        rec = sample_record()
        sigma = 0.01
        disps = []
        for seed in range(1000):
            out = perturb_record(rec, sigma, 0.0, seed=seed)
            disps.append(np.abs(out.nose - rec.nose))
            disps.append(np.abs(out.tail - rec.tail))
        mean_abs = float(np.mean(disps))
        expected = sigma * np.sqrt(2.0 / np.pi)
        assert abs(mean_abs - expected) < 0.1 * expected


class TestFrame:
    def test_normalization_bounds(self):
        rec = sample_record()
        c, s = frame_of(rec)
        norm = normalize_record(rec, c, s)
        xy = norm.all_xy()
        assert xy.min() >= -1.0 - 1e-12 and xy.max() <= 1.0 + 1e-12
        assert max(xy.max(axis=0) - xy.min(axis=0)) == pytest.approx(2.0)

    def test_idempotent(self):
        rec = sample_record()
        once = normalize_record(rec, *frame_of(rec))
        c2, s2 = frame_of(once)
        twice = normalize_record(once, c2, s2)
        assert np.max(np.abs(twice.all_xy() - once.all_xy())) < 1e-12
