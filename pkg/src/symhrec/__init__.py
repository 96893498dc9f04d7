"""symhrec: recover hierarchical 3D box structures of aircraft from 2D
component keypoints.

Pipeline: a procedural generator synthesizes paired (tree, keypoints)
samples; a dual-stream graph encoder embeds the keypoint multi-graph into a
root code; a recursive decoder unfolds it into a symmetry-hierarchy tree of
oriented bounding boxes; rule-based post-processing snaps box parameters to
the keypoints.  Metrics: Hausdorff error, 95% Hausdorff, voxel IoU, and a
subtree matching score.
"""

from .geometry import Obb, SymmetryParam, obb_corners, obb_third_axis, reflect_obb
from .keypoints import KeypointRecord
from .tree import (
    Adjacency,
    Leaf,
    Symmetry,
    flatten_tree,
    parse_tree,
    serialize_tree,
    validate_tree,
)

__version__ = "0.1.0"

__all__ = [
    "Obb",
    "SymmetryParam",
    "KeypointRecord",
    "Leaf",
    "Adjacency",
    "Symmetry",
    "obb_third_axis",
    "obb_corners",
    "reflect_obb",
    "flatten_tree",
    "validate_tree",
    "serialize_tree",
    "parse_tree",
    "__version__",
]
