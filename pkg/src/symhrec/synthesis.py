"""Synthetic training data: procedural aircraft part clouds, fitted boxes,
relation detection and contraction into a symmetry-hierarchy tree, plus the
matching top-down 2D keypoint record.

The generator keeps part dimension ranges separated enough that the
contraction order (smallest combined volume first) is the same for every
sample with the same engine count, so tree topology is a deterministic
function of engine count.  Tests pin this property.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import GeometryError, SymhrecError, TreeError
from .geometry import Obb, SymmetryParam, obb_gap_distance, reflect_obb
from .keypoints import KeypointRecord, perturb_record
from .tree import Adjacency, Leaf, Symmetry, SymhNode

LABEL_FUSELAGE = "fuselage"
LABEL_WING_LEFT = "wing_left"
LABEL_WING_RIGHT = "wing_right"
LABEL_HSTAB_LEFT = "hstab_left"
LABEL_HSTAB_RIGHT = "hstab_right"
LABEL_VSTAB = "vstab"
LABEL_ENGINE = "engine"

# bilateral plane of the canonical pose (nose +x, up +z): the x-z plane
BILATERAL_PLANE = SymmetryParam(np.array([0.0, 1.0, 0.0]), np.zeros(3))

ADJACENCY_EPS_FRAC = 0.02   # of the model bounding-box diagonal
SYMMETRY_TOL_FRAC = 0.05


@dataclass
class Part:
    label: str
    points: np.ndarray  # (m, 3)


@dataclass
class PartSet:
    parts: list
    plane: SymmetryParam = field(default_factory=lambda: BILATERAL_PLANE)

    def all_points(self):
        return np.concatenate([p.points for p in self.parts])

    def diagonal(self):
        pts = self.all_points()
        return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


@dataclass
class GenConfig:
    """Parameter ranges for the procedural generator (units: fuselage
    length is about 1).  Ranges are (low, high) tuples."""

    fuselage_length: tuple = (0.85, 1.15)
    fuselage_radius: tuple = (0.055, 0.085)
    wing_halfspan: tuple = (0.28, 0.42)
    wing_root_chord: tuple = (0.16, 0.24)
    wing_taper: tuple = (0.45, 0.65)
    # above ~20 degrees the minimum rectangle snaps to the leading edge and
    # its inner corner can cross the centerline, breaking side labels
    wing_sweep_deg: tuple = (10.0, 20.0)
    wing_thickness: tuple = (0.012, 0.018)
    wing_le_frac: tuple = (0.06, 0.18)          # root leading edge x / length
    hstab_halfspan: tuple = (0.10, 0.15)
    hstab_root_chord: tuple = (0.07, 0.11)
    hstab_taper: tuple = (0.5, 0.7)
    hstab_sweep_deg: tuple = (10.0, 25.0)
    hstab_thickness: tuple = (0.008, 0.012)
    vstab_height: tuple = (0.07, 0.10)
    vstab_root_chord: tuple = (0.07, 0.09)
    vstab_taper: tuple = (0.5, 0.7)
    vstab_sweep_deg: tuple = (20.0, 40.0)
    vstab_thickness: tuple = (0.006, 0.009)
    engine_diameter: tuple = (0.035, 0.05)
    engine_length: tuple = (0.10, 0.16)
    engine_span_frac: tuple = (0.38, 0.50)      # twin-engine span station
    engine_inner_frac: tuple = (0.20, 0.30)     # four-engine stations
    engine_outer_frac: tuple = (0.62, 0.75)
    outer_engine_scale: tuple = (0.75, 0.88)
    engine_counts: tuple = (0, 2, 4)
    points_per_part: int = 96
    noise_sigma: float = 0.0
    engine_drop: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if isinstance(value, (list, tuple)) and name != "engine_counts":
                lo, hi = value
                if not (0 < lo <= hi):
                    raise SymhrecError(f"range {name}={value} must satisfy 0 < low <= high")
        for c in self.engine_counts:
            if c not in (0, 2, 4):
                raise SymhrecError(f"engine count {c} not in {{0, 2, 4}}")
        if not self.engine_counts:
            raise SymhrecError("engine_counts must be non-empty")
        if self.noise_sigma < 0:
            raise SymhrecError(f"noise_sigma={self.noise_sigma} must be non-negative")
        if not 0.0 <= self.engine_drop <= 1.0:
            raise SymhrecError(f"engine_drop={self.engine_drop} must be in [0, 1]")
        if self.points_per_part < 32:
            raise SymhrecError("points_per_part must be at least 32")

    @classmethod
    def from_dict(cls, d):
        kwargs = dict(d)
        for k, v in kwargs.items():
            if isinstance(v, list):
                kwargs[k] = tuple(v)
        return cls(**kwargs)


def _mirror_y(points):
    out = points.copy()
    out[:, 1] = -out[:, 1]
    return out


def _slab_points(rng, corners_2d, z_lo, z_hi, n, vertical=False):
    """Point cloud of a thin quadrilateral slab.

    corners_2d: (4, 2) in order LE-root, TE-root, TE-tip, LE-tip (convex).
    When vertical, the quad lives in the x-z plane and the slab thickness
    spans y in [z_lo, z_hi].  The 8 exact corners are always included.
    """
    a, b, c, d = [np.asarray(p, dtype=np.float64) for p in corners_2d]
    u = rng.random(n)
    v = rng.random(n)
    # bilinear interpolation covers the convex quad
    p = ((1 - v)[:, None] * ((1 - u)[:, None] * a + u[:, None] * b)
         + v[:, None] * ((1 - u)[:, None] * d + u[:, None] * c))
    w = rng.uniform(z_lo, z_hi, size=n)
    corners = []
    for q in (a, b, c, d):
        for t in (z_lo, z_hi):
            corners.append((q[0], q[1], t))
    corners = np.asarray(corners)
    if vertical:
        pts = np.column_stack([p[:, 0], w, p[:, 1]])
        corners = corners[:, [0, 2, 1]]
    else:
        pts = np.column_stack([p, w])
    return np.concatenate([pts, corners])


def _with_mbr_corners(points, z_lo, z_hi):
    """Append the projected minimum bounding rectangle's corners (at both
    slab faces) so a box fitted to the points is guaranteed to cover the
    keypoint rectangle derived from the same projection."""
    center, axes, ext = min_area_rect(points[:, :2])
    corners = _rect_corners(center, axes, ext)
    extra = np.concatenate([
        np.column_stack([corners, np.full(4, z_lo)]),
        np.column_stack([corners, np.full(4, z_hi)]),
    ])
    return np.concatenate([points, extra])


def _tube_points(rng, center, length, radius, n):
    """Cloud on a tapered tube along x with exact extreme points."""
    cx, cy, cz = center
    u = rng.uniform(-1.0, 1.0, size=n)
    theta = rng.uniform(0.0, 2 * math.pi, size=n)
    rho = radius * np.sqrt(np.maximum(1.0 - u ** 4, 0.0))
    pts = np.column_stack([
        cx + u * (length / 2.0),
        cy + rho * np.cos(theta),
        cz + rho * np.sin(theta),
    ])
    extremes = np.array([
        [cx - length / 2.0, cy, cz],
        [cx + length / 2.0, cy, cz],
        [cx, cy - radius, cz],
        [cx, cy + radius, cz],
        [cx, cy, cz - radius],
        [cx, cy, cz + radius],
    ])
    return np.concatenate([pts, extremes])


def generate_aircraft(cfg: GenConfig, seed: int) -> PartSet:
    """Deterministic procedural aircraft in canonical pose.

    Exactly one fuselage; wings, horizontal stabilizers and engines come as
    mirrored pairs built by reflecting the left-side point set, so the
    bilateral symmetry is exact by construction.
    """
    rng = np.random.default_rng(seed)

    def U(rg):
        return float(rng.uniform(rg[0], rg[1]))

    n = cfg.points_per_part

    length = U(cfg.fuselage_length)
    radius = U(cfg.fuselage_radius)
    half_span = U(cfg.wing_halfspan)
    root_chord = U(cfg.wing_root_chord)
    taper = U(cfg.wing_taper)
    sweep = math.radians(U(cfg.wing_sweep_deg))
    thickness = U(cfg.wing_thickness)
    le_x = U(cfg.wing_le_frac) * length
    h_span = U(cfg.hstab_halfspan)
    h_chord = U(cfg.hstab_root_chord)
    h_taper = U(cfg.hstab_taper)
    h_sweep = math.radians(U(cfg.hstab_sweep_deg))
    h_thick = U(cfg.hstab_thickness)
    v_height = U(cfg.vstab_height)
    v_chord = U(cfg.vstab_root_chord)
    v_taper = U(cfg.vstab_taper)
    v_sweep = math.radians(U(cfg.vstab_sweep_deg))
    v_thick = U(cfg.vstab_thickness)
    engine_count = int(cfg.engine_counts[rng.integers(len(cfg.engine_counts))])
    eng_d = U(cfg.engine_diameter)
    eng_l = U(cfg.engine_length)
    span_frac = U(cfg.engine_span_frac)
    inner_frac = U(cfg.engine_inner_frac)
    outer_frac = U(cfg.engine_outer_frac)
    outer_scale = U(cfg.outer_engine_scale)

    parts = [Part(LABEL_FUSELAGE, _tube_points(rng, (0.0, 0.0, 0.0), length, radius, 2 * n))]

    def tapered_quad(le_root_x, y_root, span, chord, tp, sw):
        le_tip_x = le_root_x - span * math.tan(sw)
        return [
            (le_root_x, y_root),
            (le_root_x - chord, y_root),
            (le_tip_x - chord * tp, y_root + span),
            (le_tip_x, y_root + span),
        ]

    # left wing at +y; the small root gap stays far below the adjacency
    # threshold but keeps the wing rectangle fully on its own side
    y_root = 1.2 * radius
    wing_quad = tapered_quad(le_x, y_root, half_span, root_chord, taper, sweep)
    left_wing = _slab_points(rng, wing_quad, -thickness / 2, thickness / 2, n)
    left_wing = _with_mbr_corners(left_wing, -thickness / 2, thickness / 2)
    parts.append(Part(LABEL_WING_LEFT, left_wing))
    parts.append(Part(LABEL_WING_RIGHT, _mirror_y(left_wing)))

    h_le = -length / 2 + h_chord + 0.01 * length
    h_quad = tapered_quad(h_le, 0.15 * radius, h_span, h_chord, h_taper, h_sweep)
    left_h = _slab_points(rng, h_quad, -h_thick / 2, h_thick / 2, n)
    parts.append(Part(LABEL_HSTAB_LEFT, left_h))
    parts.append(Part(LABEL_HSTAB_RIGHT, _mirror_y(left_h)))

    # vertical stabilizer: quad in the x-z plane rooted at the fuselage
    # midline, so it reliably touches both stabilizer slabs; the tail group
    # then always contracts in the same order
    v_le = -length / 2 + v_chord + 0.015 * length
    v_quad = tapered_quad(v_le, 0.0, v_height + 0.8 * radius, v_chord, v_taper, v_sweep)
    parts.append(Part(LABEL_VSTAB, _slab_points(rng, v_quad, -v_thick / 2, v_thick / 2, n, vertical=True)))

    def engine_at(frac, d, l):
        y_e = y_root + frac * half_span
        chord_e = root_chord + frac * (taper * root_chord - root_chord)
        le_e = le_x - frac * half_span * math.tan(sweep)
        center = (le_e - chord_e / 2, y_e, -thickness / 2 - d / 2)
        return _tube_points(rng, center, l, d / 2, n)

    if engine_count == 2:
        e = engine_at(span_frac, eng_d, eng_l)
        parts.append(Part(LABEL_ENGINE, e))
        parts.append(Part(LABEL_ENGINE, _mirror_y(e)))
    elif engine_count == 4:
        inner = engine_at(inner_frac, eng_d, eng_l)
        outer = engine_at(outer_frac, eng_d * outer_scale, eng_l * outer_scale)
        parts.append(Part(LABEL_ENGINE, inner))
        parts.append(Part(LABEL_ENGINE, _mirror_y(inner)))
        parts.append(Part(LABEL_ENGINE, outer))
        parts.append(Part(LABEL_ENGINE, _mirror_y(outer)))

    return PartSet(parts)


def fit_obb(points) -> Obb:
    """PCA box fit: axes from the point covariance (descending eigenvalue,
    sign fixed so each axis' largest-magnitude component is positive),
    center from the projected min/max midpoints, extents from the projected
    ranges.  Axes are then ordered by descending extent."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise GeometryError(f"expected (n, 3) points, got shape {pts.shape}")
    if pts.shape[0] < 4:
        raise GeometryError(f"need at least 4 points, got {pts.shape[0]}")
    centroid = pts.mean(axis=0)
    x = pts - centroid
    cov = (x.T @ x) / pts.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    axes = evecs[:, ::-1].T  # rows, descending eigenvalue
    if evals[::-1][1] <= 1e-12 * max(evals[-1], 1e-300):
        raise GeometryError("points are collinear; box orientation undefined")
    for i in range(3):
        k = int(np.argmax(np.abs(axes[i])))
        if axes[i, k] < 0:
            axes[i] = -axes[i]
    proj = x @ axes.T
    lo = proj.min(axis=0)
    hi = proj.max(axis=0)
    extents = np.maximum(hi - lo, 1e-4)
    center = centroid + axes.T @ ((lo + hi) / 2.0)
    order = np.argsort(-extents, kind="stable")
    axes = axes[order]
    extents = extents[order]
    return Obb(center, extents, axes[0], axes[1])


def detect_adjacency(obbs, eps: float):
    """Index pairs (i, j), i < j, whose boxes come within eps of touching
    (separating-axis distance over the corner-projected hulls)."""
    if eps <= 0:
        raise SymhrecError("adjacency epsilon must be positive")
    pairs = []
    for i in range(len(obbs)):
        for j in range(i + 1, len(obbs)):
            if obb_gap_distance(obbs[i], obbs[j]) <= eps:
                pairs.append((i, j))
    return pairs


def detect_symmetry(obbs, plane: SymmetryParam, tol: float):
    """Greedy mirror matching across a plane.

    Returns (pairs, self_symmetric).  A box matches another when the
    reflected center is within tol and the sorted extents differ by at most
    tol; self-symmetric boxes are reported separately and excluded from
    pairing.  Ties break on the smaller candidate index.
    """
    n = len(obbs)
    reflected = [reflect_obb(o, plane) for o in obbs]
    sorted_ext = [np.sort(o.extents) for o in obbs]

    def match_dist(i, j):
        d = float(np.linalg.norm(reflected[i].center - obbs[j].center))
        e = float(np.linalg.norm(np.sort(reflected[i].extents) - sorted_ext[j]))
        return d if (d <= tol and e <= tol) else None

    pairs = []
    self_sym = []
    used = set()
    for i in range(n):
        if i in used:
            continue
        if match_dist(i, i) is not None:
            self_sym.append(i)
            used.add(i)
            continue
        best = None
        for j in range(n):
            if j == i or j in used:
                continue
            d = match_dist(i, j)
            if d is not None and (best is None or d < best[0]):
                best = (d, j)
        if best is not None:
            pairs.append((i, best[1]))
            used.add(i)
            used.add(best[1])
    return pairs, self_sym


def contract_to_symh(obbs, adjacency, symmetry_pairs, plane: SymmetryParam) -> SymhNode:
    """Collapse symmetry pairs, then contract adjacency edges smallest
    combined subtree volume first, producing a single-rooted tree.

    Each symmetry pair keeps its lower-index (left side) member as the
    canonical child.  Subtree volume counts mirrored copies, so a symmetry
    node weighs twice its child.  Ties break lexicographically on the edge
    index pair.  Raises TreeError naming the components when the relation
    graph is disconnected.
    """
    n = len(obbs)
    nodes = {i: Leaf(obbs[i]) for i in range(n)}
    vol = {i: obbs[i].volume for i in range(n)}
    members = {i: [i] for i in range(n)}
    edges = set()
    for i, j in adjacency:
        if i != j:
            edges.add((min(i, j), max(i, j)))

    def redirect(old, new):
        for a, b in list(edges):
            if old in (a, b):
                edges.discard((a, b))
                other = b if a == old else a
                if other != new:
                    edges.add((min(other, new), max(other, new)))

    for i, j in sorted((min(p), max(p)) for p in symmetry_pairs):
        if i not in nodes or j not in nodes:
            raise TreeError(f"symmetry pair ({i}, {j}) references a missing part")
        nodes[i] = Symmetry(nodes[i], plane)
        vol[i] = 2.0 * vol[i]
        members[i] = members[i] + members.pop(j)
        del nodes[j], vol[j]
        redirect(j, i)

    while len(nodes) > 1:
        if not edges:
            comps = sorted(sorted(members[k]) for k in nodes)
            raise TreeError(
                "relation graph is disconnected; components: "
                + " | ".join(str(c) for c in comps)
            )
        i, j = min(edges, key=lambda e: (vol[e[0]] + vol[e[1]], e[0], e[1]))
        edges.discard((i, j))
        nodes[i] = Adjacency(nodes[i], nodes[j])
        vol[i] += vol[j]
        members[i] = members[i] + members.pop(j)
        del nodes[j], vol[j]
        redirect(j, i)

    return nodes[min(nodes)]


# -- 2D projection ----------------------------------------------------------


def convex_hull_2d(points) -> np.ndarray:
    """Counter-clockwise convex hull (monotone chain), no repeated points."""
    pts = np.unique(np.asarray(points, dtype=np.float64), axis=0)
    if pts.shape[0] < 3:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.asarray(lower[:-1] + upper[:-1])


def min_area_rect(points):
    """Minimum-area enclosing rectangle via rotating calipers.

    Returns (center (2,), axes (2, 2) rows, extents (2,)) with the longer
    edge first and deterministic axis signs.
    """
    hull = convex_hull_2d(points)
    if hull.shape[0] == 1:
        return hull[0], np.eye(2), np.zeros(2)
    if hull.shape[0] == 2:
        d = hull[1] - hull[0]
        u = d / np.linalg.norm(d)
        v = np.array([-u[1], u[0]])
        center = hull.mean(axis=0)
        ext = np.array([float(np.linalg.norm(d)), 0.0])
        axes = np.stack([u, v])
    else:
        best = None
        m = hull.shape[0]
        for k in range(m):
            e = hull[(k + 1) % m] - hull[k]
            ln = np.linalg.norm(e)
            if ln < 1e-15:
                continue
            u = e / ln
            v = np.array([-u[1], u[0]])
            pu = hull @ u
            pv = hull @ v
            w = pu.max() - pu.min()
            h = pv.max() - pv.min()
            area = w * h
            if best is None or area < best[0] - 1e-15:
                cu = (pu.max() + pu.min()) / 2
                cv = (pv.max() + pv.min()) / 2
                best = (area, cu * u + cv * v, np.stack([u, v]), np.array([w, h]))
        _, center, axes, ext = best
    if ext[1] > ext[0]:
        axes = axes[::-1].copy()
        ext = ext[::-1].copy()
    for i in range(2):
        k = int(np.argmax(np.abs(axes[i])))
        if axes[i, k] < 0:
            axes[i] = -axes[i]
    return center, axes, ext


def _rect_corners(center, axes, ext):
    out = []
    for s1 in (-1.0, 1.0):
        for s2 in (-1.0, 1.0):
            out.append(center + s1 * ext[0] / 2 * axes[0] + s2 * ext[1] / 2 * axes[1])
    return np.asarray(out)


def _order_wing_corners(corners):
    """inner-leading, inner-trailing, outer-trailing, outer-leading
    (inner = smaller |y|, leading = larger x)."""
    idx = np.argsort(np.abs(corners[:, 1]), kind="stable")
    inner = sorted(idx[:2], key=lambda i: -corners[i, 0])
    outer = sorted(idx[2:], key=lambda i: corners[i, 0])
    return corners[[inner[0], inner[1], outer[0], outer[1]]]


def project_keypoints(parts: PartSet) -> KeypointRecord:
    """Top-down orthographic keypoints: per-part minimum bounding rectangles
    classified by the semantic label carried from generation."""
    fuselage = None
    engines = []
    wings = {}
    for part in parts.parts:
        xy = part.points[:, :2]
        if part.label == LABEL_FUSELAGE:
            fuselage = min_area_rect(xy)
        elif part.label == LABEL_ENGINE:
            center, _, _ = min_area_rect(xy)
            engines.append(center)
        elif part.label in (LABEL_WING_LEFT, LABEL_WING_RIGHT):
            center, axes, ext = min_area_rect(xy)
            wings[part.label] = _order_wing_corners(_rect_corners(center, axes, ext))
    if fuselage is None:
        raise SymhrecError("part set has no fuselage")
    center, axes, ext = fuselage
    end_a = center + ext[0] / 2 * axes[0]
    end_b = center - ext[0] / 2 * axes[0]
    nose, tail = (end_a, end_b) if end_a[0] >= end_b[0] else (end_b, end_a)
    return KeypointRecord(
        nose=nose,
        fuselage_center=center,
        tail=tail,
        engines=engines,
        left_wing=wings.get(LABEL_WING_LEFT),
        right_wing=wings.get(LABEL_WING_RIGHT),
    )


def perturb_keypoints(record: KeypointRecord, cfg: GenConfig, seed: int) -> KeypointRecord:
    return perturb_record(record, cfg.noise_sigma, cfg.engine_drop, seed)


@dataclass
class Sample:
    tree: SymhNode
    record: KeypointRecord
    parts: PartSet


def synthesize_sample(cfg: GenConfig, seed: int) -> Sample:
    """Full pipeline for one paired sample: generate parts, fit boxes,
    detect relations, contract to a tree, and project keypoints."""
    parts = generate_aircraft(cfg, seed)
    obbs = [fit_obb(p.points) for p in parts.parts]
    diag = parts.diagonal()
    adjacency = detect_adjacency(obbs, ADJACENCY_EPS_FRAC * diag)
    pairs, _self_sym = detect_symmetry(obbs, parts.plane, SYMMETRY_TOL_FRAC * diag)
    tree = contract_to_symh(obbs, adjacency, pairs, parts.plane)
    record = project_keypoints(parts)
    if cfg.noise_sigma > 0 or cfg.engine_drop > 0:
        record = perturb_keypoints(record, cfg, seed ^ 0x5EED)
    return Sample(tree, record, parts)
