"""2D component keypoint records: the interface between image-space
detection and 3D structure recovery.

A record holds the nose / fuselage-center / tail points, engine centers and
one ordered 4-vertex quadrilateral per wing.  Wing vertices are ordered
inner-leading, inner-trailing, outer-trailing, outer-leading (inner =
closer to the fuselage axis, leading = toward the nose).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import SymhrecError

TYPE_NOSE = "nose"
TYPE_FUSELAGE = "fuselage_center"
TYPE_TAIL = "tail"
TYPE_ENGINE = "engine"
TYPE_WING_LEFT = "wing_vertex_left"
TYPE_WING_RIGHT = "wing_vertex_right"

# fixed one-hot vocabulary for graph node attributes
TYPE_ORDER = (TYPE_NOSE, TYPE_FUSELAGE, TYPE_TAIL, TYPE_ENGINE, TYPE_WING_LEFT, TYPE_WING_RIGHT)
TYPE_INDEX = {t: i for i, t in enumerate(TYPE_ORDER)}


def _vec2(v, name):
    a = np.asarray(v, dtype=np.float64)
    if a.shape != (2,):
        raise SymhrecError(f"{name} must be a 2-vector, got shape {a.shape}")
    return a


@dataclass
class KeypointRecord:
    nose: np.ndarray
    fuselage_center: np.ndarray
    tail: np.ndarray
    engines: list = field(default_factory=list)
    left_wing: Optional[np.ndarray] = None    # (4, 2) ordered
    right_wing: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.nose is not None:
            self.nose = _vec2(self.nose, "nose")
        if self.fuselage_center is not None:
            self.fuselage_center = _vec2(self.fuselage_center, "fuselage_center")
        if self.tail is not None:
            self.tail = _vec2(self.tail, "tail")
        self.engines = [_vec2(e, "engine") for e in self.engines]
        for side in ("left_wing", "right_wing"):
            w = getattr(self, side)
            if w is not None:
                w = np.asarray(w, dtype=np.float64)
                if w.shape != (4, 2):
                    raise SymhrecError(f"{side} must have shape (4, 2), got {w.shape}")
                setattr(self, side, w)

    def points(self):
        """(type, xy) pairs in canonical order: body, engines, left wing,
        right wing.  This is also the graph node order."""
        out = []
        if self.nose is not None:
            out.append((TYPE_NOSE, self.nose))
        if self.fuselage_center is not None:
            out.append((TYPE_FUSELAGE, self.fuselage_center))
        if self.tail is not None:
            out.append((TYPE_TAIL, self.tail))
        for e in self.engines:
            out.append((TYPE_ENGINE, e))
        if self.left_wing is not None:
            for v in self.left_wing:
                out.append((TYPE_WING_LEFT, v))
        if self.right_wing is not None:
            for v in self.right_wing:
                out.append((TYPE_WING_RIGHT, v))
        return out

    def all_xy(self):
        pts = self.points()
        if not pts:
            raise SymhrecError("record has no keypoints")
        return np.stack([p for _, p in pts])


def axis_side(record: KeypointRecord, p) -> float:
    """Signed lateral offset of a point from the nose-tail axis; positive is
    the aircraft's left side (+y in canonical pose)."""
    d = record.nose - record.tail
    n = np.linalg.norm(d)
    if n < 1e-12:
        raise SymhrecError("nose and tail coincide; axis undefined")
    d = d / n
    perp = np.array([-d[1], d[0]])
    return float(np.dot(p - record.nose, perp))


def validate_record(record: KeypointRecord) -> list:
    """Invariant violations as strings; empty means clean."""
    issues = []
    for name in ("nose", "fuselage_center", "tail"):
        v = getattr(record, name)
        if v is None:
            issues.append(f"missing: {name}")
        elif not np.all(np.isfinite(v)):
            issues.append(f"finite: {name} has non-finite coordinates")
    for i, e in enumerate(record.engines):
        if not np.all(np.isfinite(e)):
            issues.append(f"finite: engine {i}")
    if record.nose is not None and record.tail is not None:
        if np.array_equal(record.nose, record.tail):
            issues.append("degenerate: nose equals tail")
        else:
            for side, sign in (("left_wing", 1.0), ("right_wing", -1.0)):
                w = getattr(record, side)
                if w is None:
                    continue
                if not np.all(np.isfinite(w)):
                    issues.append(f"finite: {side}")
                    continue
                for j, v in enumerate(w):
                    if axis_side(record, v) * sign <= 0:
                        issues.append(f"side: {side} vertex {j} lies on the wrong side")
    return issues


def frame_of(record: KeypointRecord):
    """Bounding-square normalization frame: (center (2,), half-extent scale).

    Mapping x -> (x - center) / scale puts the record inside [-1, 1]^2 with
    the larger dimension touching the boundary.
    """
    xy = record.all_xy()
    lo = xy.min(axis=0)
    hi = xy.max(axis=0)
    center = 0.5 * (lo + hi)
    scale = 0.5 * float(max(hi[0] - lo[0], hi[1] - lo[1]))
    if scale <= 0:
        scale = 1.0
    return center, scale


def normalize_record(record: KeypointRecord, center, scale) -> KeypointRecord:
    c = np.asarray(center, dtype=np.float64)
    s = float(scale)

    def tx(v):
        return None if v is None else (np.asarray(v, dtype=np.float64) - c) / s

    return KeypointRecord(
        nose=tx(record.nose),
        fuselage_center=tx(record.fuselage_center),
        tail=tx(record.tail),
        engines=[tx(e) for e in record.engines],
        left_wing=tx(record.left_wing),
        right_wing=tx(record.right_wing),
    )


def perturb_record(record: KeypointRecord, sigma: float, engine_drop: float, seed: int) -> KeypointRecord:
    """Degrade a record the way an upstream detector would: isotropic
    Gaussian jitter on every coordinate plus independent engine dropout.
    Body points and wings are never dropped.  Deterministic given the seed.
    """
    rng = np.random.default_rng(seed)

    # unit noise scaled afterwards: sigma=0 is an exact identity and the
    # drop decisions stay aligned across sigma values for the same seed
    def jitter(v):
        if v is None:
            return None
        v = np.asarray(v, dtype=np.float64)
        return v + sigma * rng.normal(0.0, 1.0, size=v.shape)

    nose = jitter(record.nose)
    fus = jitter(record.fuselage_center)
    tail = jitter(record.tail)
    engines = []
    for e in record.engines:
        e2 = jitter(e)
        if rng.random() >= engine_drop:
            engines.append(e2)
    return KeypointRecord(
        nose=nose,
        fuselage_center=fus,
        tail=tail,
        engines=engines,
        left_wing=jitter(record.left_wing),
        right_wing=jitter(record.right_wing),
    )


def record_to_json(record: KeypointRecord) -> str:
    def pt(type_, v):
        return {"type": type_, "xy": [float(v[0]), float(v[1])]}

    doc = {
        "format": "keypoints v1",
        "nose": pt(TYPE_NOSE, record.nose),
        "fuselage_center": pt(TYPE_FUSELAGE, record.fuselage_center),
        "tail": pt(TYPE_TAIL, record.tail),
        "engines": [pt(TYPE_ENGINE, e) for e in record.engines],
        "left_wing": None if record.left_wing is None
        else [pt(TYPE_WING_LEFT, v) for v in record.left_wing],
        "right_wing": None if record.right_wing is None
        else [pt(TYPE_WING_RIGHT, v) for v in record.right_wing],
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def record_from_json(text: str) -> KeypointRecord:
    doc = json.loads(text)
    if doc.get("format") != "keypoints v1":
        raise SymhrecError(f"unsupported keypoints format {doc.get('format')!r}")

    def xy(entry):
        return None if entry is None else np.asarray(entry["xy"], dtype=np.float64)

    def wing(entries):
        if entries is None:
            return None
        return np.stack([xy(e) for e in entries])

    return KeypointRecord(
        nose=xy(doc["nose"]),
        fuselage_center=xy(doc["fuselage_center"]),
        tail=xy(doc["tail"]),
        engines=[xy(e) for e in doc["engines"]],
        left_wing=wing(doc["left_wing"]),
        right_wing=wing(doc["right_wing"]),
    )


def save_record(record: KeypointRecord, path):
    with open(path, "w", encoding="ascii") as f:
        f.write(record_to_json(record))


def load_record(path) -> KeypointRecord:
    with open(path, "r", encoding="ascii") as f:
        return record_from_json(f.read())
