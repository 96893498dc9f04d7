"""Rule-based refinement of decoded boxes using the input 2D keypoints.

Roles are assigned to the flattened boxes by simple geometric rules, then
the fuselage, wings and engines are snapped to quantities measured from the
keypoints.  Only in-plane (x, y) parameters are touched; vertical center,
extent and any residual tilt keep their network-predicted values since the
keypoints carry no height information.  Leaves under symmetry nodes are
refined once on the canonical side, so symmetry stays exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import SymhrecError
from .geometry import Obb, reflect_obb
from .keypoints import KeypointRecord
from .synthesis import convex_hull_2d
from .tree import Adjacency, Leaf, Symmetry, SymhNode, flatten_with_provenance

ROLE_FUSELAGE = "fuselage"
ROLE_WING_LEFT = "wing_left"
ROLE_WING_RIGHT = "wing_right"
ROLE_ENGINE = "engine"
ROLE_OTHER = "other"

FUSELAGE_MAX_ANGLE_DEG = 30.0
ENGINE_MAX_VOLUME_FRAC = 0.10
RECT_PAD_FACTOR = 10.0


def hungarian(cost) -> tuple:
    """Minimum-cost assignment of a square or wide (rows <= cols) matrix.

    Returns (assignment, total) where assignment[i] is the column matched
    to row i.  Potentials-based O(n^2 m); deterministic column scan order.
    """
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    if n > m:
        raise SymhrecError("hungarian requires rows <= cols; pad or transpose first")
    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, INF)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = 0
            for j in range(1, m + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    assignment = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if p[j] > 0:
            assignment[p[j] - 1] = j - 1
    total = float(sum(cost[i, assignment[i]] for i in range(n)))
    return assignment.tolist(), total


def match_engines(pred_centers, keypoint_engines):
    """Hungarian matching of predicted engine centers to engine keypoints.

    Rectangular problems are padded to square with 10x the largest cost;
    padded matches are dropped, so unmatched predictions keep their network
    values.  Returns (pairs, total_real_cost) with pairs as (pred index,
    keypoint index).
    """
    np_pred = len(pred_centers)
    np_kp = len(keypoint_engines)
    if np_pred == 0 or np_kp == 0:
        return [], 0.0
    cost = np.zeros((np_pred, np_kp))
    for i, c in enumerate(pred_centers):
        for j, k in enumerate(keypoint_engines):
            cost[i, j] = float(np.linalg.norm(np.asarray(c) - np.asarray(k)))
    size = max(np_pred, np_kp)
    pad_value = RECT_PAD_FACTOR * max(float(cost.max()), 1e-12)
    square = np.full((size, size), pad_value)
    square[:np_pred, :np_kp] = cost
    assignment, _ = hungarian(square)
    pairs = []
    total = 0.0
    for i in range(np_pred):
        j = assignment[i]
        if 0 <= j < np_kp:
            pairs.append((i, j))
            total += cost[i, j]
    return pairs, total


def _lateral_dir(axis_dir):
    a = np.asarray(axis_dir, dtype=np.float64)
    lat = np.cross(np.array([0.0, 0.0, 1.0]), a)
    n = np.linalg.norm(lat)
    if n < 1e-9:
        lat = np.array([0.0, 1.0, 0.0])
        n = 1.0
    return lat / n


def _longest_axis(obb: Obb):
    k = int(np.argmax(obb.extents))
    return obb.rotation[k]


def _lateral_reach(obb: Obb, lat, origin_l=0.0):
    c = float(np.dot(obb.center, lat)) - origin_l
    half = float(np.sum(0.5 * obb.extents * np.abs(obb.rotation @ lat)))
    return c, abs(c) + half


def _point_in_footprint(p_xy, obb: Obb, pad=1e-9):
    corners = obb.corners()[:, :2]
    hull = convex_hull_2d(corners)
    if hull.shape[0] < 3:
        return False
    for k in range(hull.shape[0]):
        a = hull[k]
        b = hull[(k + 1) % hull.shape[0]]
        cross = (b[0] - a[0]) * (p_xy[1] - a[1]) - (b[1] - a[1]) * (p_xy[0] - a[0])
        if cross < -pad:
            return False
    return True


def assign_roles(obbs, axis_dir=(1.0, 0.0, 0.0)):
    """Role per box: fuselage = largest volume among boxes whose longest
    axis lies within 30 degrees of the nose-tail direction (falling back to
    plain largest volume); wings = the laterally furthest-reaching mirror
    pair, sides by lateral sign; engines = small boxes under a wing
    footprint; everything else is other."""
    if not obbs:
        raise SymhrecError("no boxes to assign roles to")
    axis_dir = np.asarray(axis_dir, dtype=np.float64)
    axis_dir = axis_dir / max(np.linalg.norm(axis_dir), 1e-12)
    lat = _lateral_dir(axis_dir)
    roles = [ROLE_OTHER] * len(obbs)

    cos_limit = np.cos(np.radians(FUSELAGE_MAX_ANGLE_DEG))
    aligned = [
        i for i, o in enumerate(obbs)
        if abs(float(np.dot(_longest_axis(o), axis_dir))) >= cos_limit
    ]
    candidates = aligned if aligned else list(range(len(obbs)))
    fus = min(candidates, key=lambda i: (-obbs[i].volume, i))
    roles[fus] = ROLE_FUSELAGE
    origin_l = float(np.dot(obbs[fus].center, lat))

    sides = {1.0: None, -1.0: None}
    for i, o in enumerate(obbs):
        if i == fus:
            continue
        c, reach = _lateral_reach(o, lat, origin_l)
        side = 1.0 if c > 0 else -1.0
        if abs(c) < 1e-12:
            continue
        if sides[side] is None or reach > sides[side][1]:
            sides[side] = (i, reach)
    if sides[1.0] is not None and sides[-1.0] is not None:
        (i_l, r_l), (i_r, r_r) = sides[1.0], sides[-1.0]
        vol_ratio = max(obbs[i_l].volume, obbs[i_r].volume) / max(
            min(obbs[i_l].volume, obbs[i_r].volume), 1e-300
        )
        if abs(r_l - r_r) <= 0.5 * max(r_l, r_r) and vol_ratio <= 4.0:
            roles[i_l] = ROLE_WING_LEFT
            roles[i_r] = ROLE_WING_RIGHT

    wing_boxes = [obbs[i] for i, r in enumerate(roles) if r in (ROLE_WING_LEFT, ROLE_WING_RIGHT)]
    fus_volume = obbs[fus].volume
    for i, o in enumerate(obbs):
        if roles[i] != ROLE_OTHER:
            continue
        if o.volume < ENGINE_MAX_VOLUME_FRAC * fus_volume and any(
            _point_in_footprint(o.center[:2], w, pad=1e-6) for w in wing_boxes
        ):
            roles[i] = ROLE_ENGINE
    return roles


@dataclass
class RefinementReport:
    roles: list
    changes: list = field(default_factory=list)
    engine_assignment: list = field(default_factory=list)
    engine_cost: float = 0.0
    skipped: list = field(default_factory=list)

    def to_json(self) -> str:
        doc = {
            "roles": self.roles,
            "changes": [
                {
                    "role": c["role"],
                    "before": [float(x) for x in c["before"]],
                    "after": [float(x) for x in c["after"]],
                }
                for c in self.changes
            ],
            "engine_assignment": [[int(a), int(b)] for a, b in self.engine_assignment],
            "engine_cost": float(self.engine_cost),
            "skipped": self.skipped,
        }
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def _quad_rect(quad):
    """Center, in-plane principal directions and extents of a 4-point
    quadrilateral (exact for the rectangles the projector emits)."""
    q = np.asarray(quad, dtype=np.float64)
    c = q.mean(axis=0)
    x = q - c
    cov = x.T @ x
    _, vecs = np.linalg.eigh(cov)
    dirs = vecs[:, ::-1].T
    for i in range(2):
        k = int(np.argmax(np.abs(dirs[i])))
        if dirs[i, k] < 0:
            dirs[i] = -dirs[i]
    proj = x @ dirs.T
    ext = proj.max(axis=0) - proj.min(axis=0)
    if ext[1] > ext[0]:
        dirs = dirs[::-1].copy()
        ext = ext[::-1].copy()
    return c, dirs, ext


def _vertical_extent(obb: Obb):
    """Extent along the old axis most aligned with z, and the extent of the
    remaining in-plane short axis."""
    z_align = np.abs(obb.rotation @ np.array([0.0, 0.0, 1.0]))
    k3 = int(np.argmax(z_align))
    return k3


def _refit_in_plane(obb: Obb, center_xy, dir_xy, long_extent, short_extent=None) -> Obb:
    """Rebuild a box with prescribed in-plane frame and sizes, keeping the
    vertical extent and center height from the old box."""
    k3 = _vertical_extent(obb)
    others = [k for k in range(3) if k != k3]
    u = np.asarray(dir_xy, dtype=np.float64)
    u = u / max(np.linalg.norm(u), 1e-12)
    a1 = np.array([u[0], u[1], 0.0])
    a2 = np.array([-u[1], u[0], 0.0])
    align1 = [abs(float(np.dot(obb.rotation[k], a1))) for k in others]
    k1 = others[int(np.argmax(align1))]
    k2 = others[1] if k1 == others[0] else others[0]
    if short_extent is None:
        short_extent = float(obb.extents[k2])
    extents = np.array([long_extent, short_extent, float(obb.extents[k3])])
    center = np.array([center_xy[0], center_xy[1], float(obb.center[2])])
    return Obb(center, extents, a1, a2)


def refine(tree: SymhNode, record: KeypointRecord):
    """Snap decoded boxes to the keypoints.

    Fuselage: in-plane center, direction and length from nose/tail.  Wings:
    in-plane frame and sizes from the wing quadrilateral of the matching
    side.  Engines: centers moved to Hungarian-matched engine keypoints.
    Tree topology is never changed.  Returns (refined tree, report).
    """
    flat = flatten_with_provenance(tree)
    if record.nose is not None and record.tail is not None:
        d2 = record.nose - record.tail
        n = np.linalg.norm(d2)
        axis_dir = np.array([d2[0], d2[1], 0.0]) / n if n > 1e-12 else np.array([1.0, 0.0, 0.0])
    else:
        axis_dir = np.array([1.0, 0.0, 0.0])
    roles = assign_roles([f.obb for f in flat], axis_dir)
    report = RefinementReport(roles=list(roles))

    # candidate leaf updates: (reflection count, flat index) keeps the
    # canonical-side instance when a leaf is seen through a symmetry node
    candidates = []

    def propose(flat_idx, new_obb):
        inst = flat[flat_idx]
        back = new_obb
        for plane in reversed(inst.planes):
            back = reflect_obb(back, plane)
        candidates.append(((len(inst.planes), flat_idx), inst.leaf, back, roles[flat_idx]))

    if record.nose is None or record.tail is None:
        report.skipped.append("fuselage: nose or tail keypoint missing")
    else:
        mid = 0.5 * (record.nose + record.tail)
        u = (record.nose - record.tail)
        length = float(np.linalg.norm(u))
        for i, role in enumerate(roles):
            if role == ROLE_FUSELAGE and length > 1e-12:
                propose(i, _refit_in_plane(flat[i].obb, mid, u / length, length))

    for side_role, quad in ((ROLE_WING_LEFT, record.left_wing), (ROLE_WING_RIGHT, record.right_wing)):
        idxs = [i for i, r in enumerate(roles) if r == side_role]
        if not idxs:
            continue
        if quad is None:
            report.skipped.append(f"{side_role}: wing keypoints missing")
            continue
        c, dirs, ext = _quad_rect(quad)
        for i in idxs:
            propose(i, _refit_in_plane(flat[i].obb, c, dirs[0], float(ext[0]), float(ext[1])))

    engine_idx = [i for i, r in enumerate(roles) if r == ROLE_ENGINE]
    if engine_idx:
        if record.engines:
            pred_centers = [flat[i].obb.center[:2] for i in engine_idx]
            pairs, cost = match_engines(pred_centers, record.engines)
            report.engine_assignment = [(engine_idx[i], j) for i, j in pairs]
            report.engine_cost = cost
            for i, j in pairs:
                fi = engine_idx[i]
                old = flat[fi].obb
                kp = record.engines[j]
                moved = Obb(
                    np.array([kp[0], kp[1], old.center[2]]),
                    old.extents.copy(), old.axis1.copy(), old.axis2.copy(),
                )
                propose(fi, moved)
        else:
            report.skipped.append("engines: no engine keypoints")

    updates = {}
    for key, leaf, new_obb, role in sorted(candidates, key=lambda c: c[0]):
        if id(leaf) not in updates:
            updates[id(leaf)] = (leaf, new_obb, role)

    for leaf, new_obb, role in updates.values():
        report.changes.append({
            "role": role,
            "before": leaf.obb.to_vector(),
            "after": new_obb.to_vector(),
        })

    def rebuild(node):
        if isinstance(node, Leaf):
            if id(node) in updates:
                return Leaf(updates[id(node)][1])
            return Leaf(node.obb)
        if isinstance(node, Adjacency):
            return Adjacency(rebuild(node.left), rebuild(node.right))
        if isinstance(node, Symmetry):
            return Symmetry(rebuild(node.child), node.param)
        raise SymhrecError(f"unknown node type {type(node).__name__}")

    return rebuild(tree), report
