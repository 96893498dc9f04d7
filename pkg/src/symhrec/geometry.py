"""Oriented bounding boxes and reflection planes.

An OBB is stored as a 12-number code: center (3), edge lengths (3) and the
first two axis direction vectors (3 + 3).  The third axis is always derived
as the cross product of the first two, which keeps the frame right-handed
by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError

UNIT_TOL = 1e-6
EXTENT_FLOOR = 1e-4


def _as_vec3(v, name):
    a = np.array(v, dtype=np.float64)  # owning copy; callers keep their arrays
    if a.shape != (3,):
        raise GeometryError(f"{name} must be a 3-vector, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise GeometryError(f"{name} contains non-finite values")
    return a


def obb_third_axis(axis1, axis2):
    """Cross product of the first two box axes, validated to be a unit frame.

    Raises GeometryError when the inputs are not unit length or not mutually
    orthogonal within 1e-6.
    """
    a1 = _as_vec3(axis1, "axis1")
    a2 = _as_vec3(axis2, "axis2")
    n1 = np.linalg.norm(a1)
    n2 = np.linalg.norm(a2)
    if abs(n1 - 1.0) > UNIT_TOL or abs(n2 - 1.0) > UNIT_TOL:
        raise GeometryError(f"axes must be unit length (|a1|={n1:.8f}, |a2|={n2:.8f})")
    if abs(float(np.dot(a1, a2))) > UNIT_TOL:
        raise GeometryError(f"axes must be orthogonal (a1.a2={float(np.dot(a1, a2)):.2e})")
    return np.cross(a1, a2)


@dataclass
class Obb:
    """Oriented bounding box: center, full edge lengths, two unit axes."""

    center: np.ndarray
    extents: np.ndarray
    axis1: np.ndarray
    axis2: np.ndarray

    def __post_init__(self):
        self.center = _as_vec3(self.center, "center")
        extents = np.array(self.extents, dtype=np.float64)
        if extents.shape != (3,) or not np.all(np.isfinite(extents)):
            raise GeometryError("extents must be a finite 3-vector")
        # thin parts stay voxelizable; negative extents are a caller bug
        if np.any(extents < 0):
            raise GeometryError("extents must be non-negative")
        self.extents = np.maximum(extents, EXTENT_FLOOR)
        self.axis1 = _as_vec3(self.axis1, "axis1")
        self.axis2 = _as_vec3(self.axis2, "axis2")
        obb_third_axis(self.axis1, self.axis2)

    @classmethod
    def _unchecked(cls, center, extents, axis1, axis2):
        """Bypass validation (used by the parser so bad files still load
        and can be reported through validate_tree)."""
        obj = object.__new__(cls)
        obj.center = np.asarray(center, dtype=np.float64)
        obj.extents = np.asarray(extents, dtype=np.float64)
        obj.axis1 = np.asarray(axis1, dtype=np.float64)
        obj.axis2 = np.asarray(axis2, dtype=np.float64)
        return obj

    @property
    def axis3(self):
        return np.cross(self.axis1, self.axis2)

    @property
    def rotation(self):
        """3x3 matrix with the box axes as rows."""
        return np.stack([self.axis1, self.axis2, self.axis3])

    @property
    def volume(self):
        return float(np.prod(self.extents))

    def to_vector(self):
        """12-number code: center, extents, axis1, axis2."""
        return np.concatenate([self.center, self.extents, self.axis1, self.axis2])

    @classmethod
    def from_vector(cls, v):
        """Build a valid box from a free 12-vector (e.g. a network output).

        Extents are clamped, axes re-orthonormalized via Gram-Schmidt with a
        deterministic fallback basis when degenerate.
        """
        v = np.asarray(v, dtype=np.float64).reshape(12)
        if not np.all(np.isfinite(v)):
            raise GeometryError("OBB code contains non-finite values")
        center = v[0:3]
        extents = np.maximum(np.abs(v[3:6]), EXTENT_FLOOR)
        a1, a2 = orthonormal_pair(v[6:9], v[9:12])
        return cls(center, extents, a1, a2)

    def corners(self):
        return obb_corners(self)

    def __eq__(self, other):
        if not isinstance(other, Obb):
            return NotImplemented
        return (
            np.array_equal(self.center, other.center)
            and np.array_equal(self.extents, other.extents)
            and np.array_equal(self.axis1, other.axis1)
            and np.array_equal(self.axis2, other.axis2)
        )


def orthonormal_pair(v1, v2):
    """Gram-Schmidt two free vectors into an orthonormal pair.

    Near-zero or near-parallel inputs fall back to canonical basis vectors
    (picking the one least aligned with what is already fixed), so the
    result is always a valid frame.
    """
    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    n1 = np.linalg.norm(v1)
    if n1 < 1e-8:
        a1 = np.array([1.0, 0.0, 0.0])
    else:
        a1 = v1 / n1
    w = v2 - np.dot(v2, a1) * a1
    n2 = np.linalg.norm(w)
    if n2 < 1e-8:
        k = int(np.argmin(np.abs(a1)))
        e = np.zeros(3)
        e[k] = 1.0
        w = e - np.dot(e, a1) * a1
        n2 = np.linalg.norm(w)
    a2 = w / n2
    return a1, a2


@dataclass
class SymmetryParam:
    """Reflection plane: unit normal plus a point on the plane."""

    normal: np.ndarray
    point: np.ndarray

    def __post_init__(self):
        self.normal = _as_vec3(self.normal, "normal")
        self.point = _as_vec3(self.point, "point")
        n = np.linalg.norm(self.normal)
        if abs(n - 1.0) > UNIT_TOL:
            raise GeometryError(f"plane normal must be unit length (|n|={n:.8f})")

    @classmethod
    def _unchecked(cls, normal, point):
        obj = object.__new__(cls)
        obj.normal = np.asarray(normal, dtype=np.float64)
        obj.point = np.asarray(point, dtype=np.float64)
        return obj

    @classmethod
    def from_vector(cls, v):
        """Build a valid plane from a free 6-vector; degenerate normals fall
        back to +y (the lateral direction in canonical pose)."""
        v = np.asarray(v, dtype=np.float64).reshape(6)
        if not np.all(np.isfinite(v)):
            raise GeometryError("symmetry code contains non-finite values")
        n = v[0:3]
        norm = np.linalg.norm(n)
        if norm < 1e-8:
            n = np.array([0.0, 1.0, 0.0])
        else:
            n = n / norm
        return cls(n, v[3:6])

    def to_vector(self):
        return np.concatenate([self.normal, self.point])

    def canonical(self):
        """Equivalent plane in canonical form: normal sign fixed so its
        largest-magnitude component is positive, point = closest point of
        the plane to the origin.  Used for regression targets."""
        n = self.normal
        k = int(np.argmax(np.abs(n)))
        if n[k] < 0:
            n = -n
        p = float(np.dot(self.point, n)) * n
        return SymmetryParam(n, p)

    def __eq__(self, other):
        if not isinstance(other, SymmetryParam):
            return NotImplemented
        return np.array_equal(self.normal, other.normal) and np.array_equal(
            self.point, other.point
        )


def reflect_point(p, sym: SymmetryParam):
    p = np.asarray(p, dtype=np.float64)
    n = sym.normal
    return p - 2.0 * np.dot(p - sym.point, n) * n


def reflect_direction(v, sym: SymmetryParam):
    v = np.asarray(v, dtype=np.float64)
    n = sym.normal
    return v - 2.0 * np.dot(v, n) * n


def reflect_obb(obb: Obb, sym: SymmetryParam) -> Obb:
    """Mirror a box across a plane.

    Both stored axes are reflected; the derived third axis (cross product)
    then differs in sign from the reflected original third axis, which is
    exactly what restores a right-handed frame.  Extents are unchanged, so
    the mirrored geometry is exact and the operation is an involution.
    """
    return Obb(
        reflect_point(obb.center, sym),
        obb.extents.copy(),
        reflect_direction(obb.axis1, sym),
        reflect_direction(obb.axis2, sym),
    )


_CORNER_SIGNS = np.array(
    [[sx, sy, sz] for sx in (-1.0, 1.0) for sy in (-1.0, 1.0) for sz in (-1.0, 1.0)]
)


def obb_corners(obb: Obb) -> np.ndarray:
    """The 8 corner points, shape (8, 3)."""
    half = 0.5 * obb.extents
    return obb.center + (_CORNER_SIGNS * half) @ obb.rotation


def points_in_obb(points, obb: Obb, pad=0.0):
    """Boolean mask of points inside the box (inclusive, optionally padded)."""
    points = np.asarray(points, dtype=np.float64)
    local = (points - obb.center) @ obb.rotation.T
    return np.all(np.abs(local) <= 0.5 * obb.extents + pad, axis=-1)


def obb_gap_distance(a: Obb, b: Obb) -> float:
    """Separation distance between two boxes.

    Projects both corner sets onto the 15 separating-axis candidates (6 face
    normals + 9 edge cross products) and returns the largest interval gap,
    clamped at 0 when the boxes overlap on every axis.
    """
    ca = obb_corners(a)
    cb = obb_corners(b)
    axes = [a.axis1, a.axis2, a.axis3, b.axis1, b.axis2, b.axis3]
    for u in (a.axis1, a.axis2, a.axis3):
        for v in (b.axis1, b.axis2, b.axis3):
            w = np.cross(u, v)
            n = np.linalg.norm(w)
            if n > 1e-9:
                axes.append(w / n)
    gap = 0.0
    for axis in axes:
        pa = ca @ axis
        pb = cb @ axis
        g = max(pb.min() - pa.max(), pa.min() - pb.max())
        if g > gap:
            gap = g
    return gap
