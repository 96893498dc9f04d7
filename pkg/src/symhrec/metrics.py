"""Evaluation metrics: symmetric Hausdorff error over box corner sets, its
95th percentile variant, voxelized IoU on a shared grid, and the subtree
matching score for tree topology."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import directed_min_dists, pack_boxes, voxel_occupancy
from .errors import SymhrecError
from .tree import SymhNode, children, flatten_tree, node_count


def _corner_cloud(tree: SymhNode) -> np.ndarray:
    obbs = flatten_tree(tree)
    if not obbs:
        raise SymhrecError("tree has no boxes")
    return np.concatenate([o.corners() for o in obbs])


def _joint_diagonal(a: np.ndarray, b: np.ndarray) -> float:
    pts = np.concatenate([a, b])
    d = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    return d if d > 0 else 1.0


def hausdorff(pred: SymhNode, gt: SymhNode, normalize: bool = True) -> float:
    """Symmetric Hausdorff distance between the corner vertices of the two
    flattened box sets, scaled by the joint bounding-box diagonal so values
    are comparable across shapes."""
    a = _corner_cloud(pred)
    b = _corner_cloud(gt)
    scale = _joint_diagonal(a, b) if normalize else 1.0
    d_ab = directed_min_dists(a, b).max()
    d_ba = directed_min_dists(b, a).max()
    return float(max(d_ab, d_ba)) / scale


def hausdorff95(pred: SymhNode, gt: SymhNode, normalize: bool = True) -> float:
    """95th percentile (linear interpolation) of the pooled nearest-point
    distances from both directions."""
    a = _corner_cloud(pred)
    b = _corner_cloud(gt)
    scale = _joint_diagonal(a, b) if normalize else 1.0
    pooled = np.concatenate([directed_min_dists(a, b), directed_min_dists(b, a)])
    return float(np.percentile(pooled, 95)) / scale


def voxel_iou(pred: SymhNode, gt: SymhNode, resolution: int = 64) -> float:
    """Volume IoU on a resolution^3 grid spanning the joint bounding box;
    a voxel belongs to a set when its center lies inside any of its boxes."""
    if resolution < 16:
        raise SymhrecError("voxel resolution must be at least 16")
    pred_boxes = flatten_tree(pred)
    gt_boxes = flatten_tree(gt)
    a = np.concatenate([o.corners() for o in pred_boxes])
    b = np.concatenate([o.corners() for o in gt_boxes])
    pts = np.concatenate([a, b])
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    step = np.maximum(hi - lo, 1e-12) / resolution
    occ_p = voxel_occupancy(lo, step, resolution, *pack_boxes(pred_boxes))
    occ_g = voxel_occupancy(lo, step, resolution, *pack_boxes(gt_boxes))
    union = int(np.logical_or(occ_p, occ_g).sum())
    if union == 0:
        raise SymhrecError("voxel union is empty; resolution too coarse for these boxes")
    inter = int(np.logical_and(occ_p, occ_g).sum())
    return inter / union


def same_structure(a: SymhNode, b: SymhNode) -> bool:
    if a.kind != b.kind:
        return False
    ca = children(a)
    cb = children(b)
    if len(ca) != len(cb):
        return False
    return all(same_structure(x, y) for x, y in zip(ca, cb))


def sms(pred: SymhNode, gt: SymhNode) -> float:
    """Subtree matching score.

    Trees are walked in lockstep from the roots; a paired node counts when
    the whole subtrees rooted there are structurally identical (kinds only,
    geometry ignored).  Pairing stops on a branch at the first kind
    mismatch.  Normalized by the larger tree's node count.
    """

    def matched(a, b):
        if a.kind != b.kind:
            return 0
        if same_structure(a, b):
            return node_count(a)
        return sum(matched(x, y) for x, y in zip(children(a), children(b)))

    return matched(pred, gt) / max(node_count(pred), node_count(gt))


@dataclass
class EvalRow:
    sample_id: str
    e_h: float
    e_h95: float
    iou: float
    sms: float


@dataclass
class EvalResult:
    rows: list

    @property
    def mean_e_h(self):
        return float(np.mean([r.e_h for r in self.rows]))

    @property
    def mean_e_h95(self):
        return float(np.mean([r.e_h95 for r in self.rows]))

    @property
    def mean_iou(self):
        return float(np.mean([r.iou for r in self.rows]))

    @property
    def mean_sms(self):
        return float(np.mean([r.sms for r in self.rows]))

    def to_csv(self) -> str:
        lines = ["id,E_H,E_H95,IoU,SMS"]
        for r in self.rows:
            lines.append(f"{r.sample_id},{r.e_h:.6f},{r.e_h95:.6f},{r.iou:.6f},{r.sms:.6f}")
        lines.append(
            f"mean,{self.mean_e_h:.6f},{self.mean_e_h95:.6f},{self.mean_iou:.6f},{self.mean_sms:.6f}"
        )
        return "\n".join(lines) + "\n"


def evaluate_pair(sample_id: str, pred: SymhNode, gt: SymhNode, resolution: int = 64) -> EvalRow:
    return EvalRow(
        sample_id=sample_id,
        e_h=hausdorff(pred, gt),
        e_h95=hausdorff95(pred, gt),
        iou=voxel_iou(pred, gt, resolution),
        sms=sms(pred, gt),
    )
