"""Binary symmetry-hierarchy trees over oriented bounding boxes.

Three node kinds: a leaf holds one box, an adjacency node joins two
subtrees, a symmetry node wraps one subtree together with the reflection
plane that generates its mirrored half.  The canonical text serialization
is one pre-order node per line.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ParseError, TreeError
from .geometry import Obb, SymmetryParam, reflect_obb, reflect_point

KIND_LEAF = "leaf"
KIND_ADJACENCY = "adjacency"
KIND_SYMMETRY = "symmetry"

# classifier label convention: 0 = leaf/OBB, 1 = adjacency, 2 = symmetry
KIND_LABELS = {KIND_LEAF: 0, KIND_ADJACENCY: 1, KIND_SYMMETRY: 2}


@dataclass(eq=False)
class Leaf:
    obb: Obb
    kind = KIND_LEAF


@dataclass(eq=False)
class Adjacency:
    left: "SymhNode"
    right: "SymhNode"
    kind = KIND_ADJACENCY


@dataclass(eq=False)
class Symmetry:
    child: "SymhNode"
    param: SymmetryParam
    kind = KIND_SYMMETRY


SymhNode = Union[Leaf, Adjacency, Symmetry]


def children(node: SymhNode):
    if isinstance(node, Adjacency):
        return (node.left, node.right)
    if isinstance(node, Symmetry):
        return (node.child,)
    return ()


def node_count(tree: SymhNode) -> int:
    return 1 + sum(node_count(c) for c in children(tree) if c is not None)


def leaf_count(tree: SymhNode) -> int:
    if isinstance(tree, Leaf):
        return 1
    return sum(leaf_count(c) for c in children(tree) if c is not None)


def depth(tree: SymhNode) -> int:
    kids = [c for c in children(tree) if c is not None]
    return 1 + (max(depth(c) for c in kids) if kids else 0)


def census(tree: SymhNode) -> dict:
    """Node counts per kind."""
    out = {KIND_LEAF: 0, KIND_ADJACENCY: 0, KIND_SYMMETRY: 0}

    def walk(n):
        out[n.kind] += 1
        for c in children(n):
            if c is not None:
                walk(c)

    walk(tree)
    return out


def iter_preorder(tree: SymhNode):
    stack = [tree]
    while stack:
        n = stack.pop()
        yield n
        stack.extend(reversed([c for c in children(n) if c is not None]))


def flatten_tree(tree: SymhNode) -> list:
    """All leaf boxes in pre-order, with each symmetry node contributing its
    child's boxes followed by their reflections."""
    if isinstance(tree, Leaf):
        return [tree.obb]
    if isinstance(tree, Adjacency):
        return flatten_tree(tree.left) + flatten_tree(tree.right)
    if isinstance(tree, Symmetry):
        base = flatten_tree(tree.child)
        return base + [reflect_obb(o, tree.param) for o in base]
    raise TreeError(f"unknown node type {type(tree).__name__}")


@dataclass
class FlatInstance:
    """One expanded box plus where it came from: the source leaf and the
    reflection planes applied (outermost last)."""

    obb: Obb
    leaf: Leaf
    planes: tuple


def flatten_with_provenance(tree: SymhNode) -> list:
    if isinstance(tree, Leaf):
        return [FlatInstance(tree.obb, tree, ())]
    if isinstance(tree, Adjacency):
        return flatten_with_provenance(tree.left) + flatten_with_provenance(tree.right)
    if isinstance(tree, Symmetry):
        base = flatten_with_provenance(tree.child)
        mirrored = [
            FlatInstance(reflect_obb(f.obb, tree.param), f.leaf, f.planes + (tree.param,))
            for f in base
        ]
        return base + mirrored
    raise TreeError(f"unknown node type {type(tree).__name__}")


@dataclass
class Violation:
    code: str
    where: str
    detail: str

    def __str__(self):
        return f"{self.code} at {self.where}: {self.detail}"


def validate_tree(tree: SymhNode) -> list:
    """All invariant violations; an empty list means the tree is valid.

    Checks node arity, acyclicity, box axis/extent invariants and plane
    normal length.  Works on corrupted or unchecked-parsed trees.
    """
    issues = []
    on_path = set()

    def check_obb(obb, where):
        for name, v in (("center", obb.center), ("extents", obb.extents),
                        ("axis1", obb.axis1), ("axis2", obb.axis2)):
            arr = np.asarray(v)
            if arr.shape != (3,) or not np.all(np.isfinite(arr)):
                issues.append(Violation("finite", where, f"{name} is not a finite 3-vector"))
                return
        if np.any(obb.extents <= 0):
            issues.append(Violation("extent", where, f"non-positive extent {obb.extents}"))
        n1 = np.linalg.norm(obb.axis1)
        n2 = np.linalg.norm(obb.axis2)
        if abs(n1 - 1.0) > 1e-6 or abs(n2 - 1.0) > 1e-6:
            issues.append(Violation("axes", where, f"axis norms ({n1:.7f}, {n2:.7f})"))
        elif abs(float(np.dot(obb.axis1, obb.axis2))) > 1e-6:
            issues.append(Violation("axes", where, "axis1 and axis2 not orthogonal"))

    def walk(node, where):
        if id(node) in on_path:
            issues.append(Violation("cycle", where, "node is its own ancestor"))
            return
        if isinstance(node, Leaf):
            if node.obb is None:
                issues.append(Violation("arity", where, "leaf without box"))
            else:
                check_obb(node.obb, where)
            return
        if isinstance(node, Adjacency):
            kids = (node.left, node.right)
        elif isinstance(node, Symmetry):
            kids = (node.child,)
            p = node.param
            if p is None:
                issues.append(Violation("arity", where, "symmetry node without plane"))
            else:
                n = np.asarray(p.normal)
                if n.shape != (3,) or not np.all(np.isfinite(n)) or abs(np.linalg.norm(n) - 1.0) > 1e-6:
                    issues.append(Violation("normal", where, "plane normal not unit length"))
        else:
            issues.append(Violation("kind", where, f"unknown node type {type(node).__name__}"))
            return
        on_path.add(id(node))
        for i, c in enumerate(kids):
            if c is None:
                issues.append(Violation("arity", where, f"{node.kind} child {i} missing"))
            else:
                walk(c, f"{where}.{i}")
        on_path.discard(id(node))

    walk(tree, "root")
    return issues


def require_valid(tree: SymhNode):
    issues = validate_tree(tree)
    if issues:
        raise TreeError("; ".join(str(v) for v in issues))


def _fmt(values):
    return " ".join(repr(float(x)) for x in values)


def serialize_tree(tree: SymhNode) -> str:
    """Line-oriented pre-order text; floats use shortest round-trip form."""
    lines = ["SYMH v1"]

    def walk(node):
        if isinstance(node, Leaf):
            o = node.obb
            lines.append("L " + _fmt(np.concatenate([o.center, o.extents, o.axis1, o.axis2])))
        elif isinstance(node, Adjacency):
            lines.append("A")
            walk(node.left)
            walk(node.right)
        elif isinstance(node, Symmetry):
            lines.append("S " + _fmt(np.concatenate([node.param.normal, node.param.point])))
            walk(node.child)
        else:
            raise TreeError(f"unknown node type {type(node).__name__}")

    walk(tree)
    return "\n".join(lines) + "\n"


def parse_tree(text: str) -> SymhNode:
    """Inverse of serialize_tree.

    Raises ParseError with a line number on malformed input.  Numeric
    invariants are not enforced here so that a damaged file can still be
    loaded and reported through validate_tree.
    """
    lines = text.splitlines()
    if not lines or lines[0].strip() != "SYMH v1":
        raise ParseError("expected header 'SYMH v1'", line=1)
    pos = 1

    def floats(parts, n, line_no):
        if len(parts) != n:
            raise ParseError(f"expected {n} numeric fields, got {len(parts)}", line=line_no)
        try:
            return [float(p) for p in parts]
        except ValueError as e:
            raise ParseError(str(e), line=line_no) from None

    def parse_node():
        nonlocal pos
        while pos < len(lines) and not lines[pos].strip():
            pos += 1
        if pos >= len(lines):
            raise ParseError("unexpected end of input", line=len(lines))
        line_no = pos + 1
        parts = lines[pos].split()
        pos += 1
        tag = parts[0]
        if tag == "L":
            v = floats(parts[1:], 12, line_no)
            return Leaf(Obb._unchecked(v[0:3], v[3:6], v[6:9], v[9:12]))
        if tag == "A":
            if len(parts) != 1:
                raise ParseError("adjacency line takes no fields", line=line_no)
            left = parse_node()
            right = parse_node()
            return Adjacency(left, right)
        if tag == "S":
            v = floats(parts[1:], 6, line_no)
            param = SymmetryParam._unchecked(v[0:3], v[3:6])
            return Symmetry(parse_node(), param)
        raise ParseError(f"unknown node tag {tag!r}", line=line_no)

    root = parse_node()
    while pos < len(lines):
        if lines[pos].strip():
            raise ParseError("trailing content after tree", line=pos + 1)
        pos += 1
    return root


def save_tree(tree: SymhNode, path):
    with open(path, "w", encoding="ascii") as f:
        f.write(serialize_tree(tree))


def load_tree(path) -> SymhNode:
    with open(path, "r", encoding="ascii") as f:
        return parse_tree(f.read())


def map_leaf_obbs(tree: SymhNode, fn) -> SymhNode:
    """Structure-preserving copy with fn applied to every leaf box."""
    if isinstance(tree, Leaf):
        return Leaf(fn(tree.obb))
    if isinstance(tree, Adjacency):
        return Adjacency(map_leaf_obbs(tree.left, fn), map_leaf_obbs(tree.right, fn))
    if isinstance(tree, Symmetry):
        return Symmetry(map_leaf_obbs(tree.child, fn), tree.param)
    raise TreeError(f"unknown node type {type(tree).__name__}")


def scale_tree(tree: SymhNode, scale: float, offset) -> SymhNode:
    """Similarity transform x -> (x - offset) / scale on every geometric
    quantity (extents scale, directions unchanged)."""
    offset = np.asarray(offset, dtype=np.float64)
    s = float(scale)

    def walk(node):
        if isinstance(node, Leaf):
            o = node.obb
            return Leaf(Obb((o.center - offset) / s, o.extents / s, o.axis1, o.axis2))
        if isinstance(node, Adjacency):
            return Adjacency(walk(node.left), walk(node.right))
        if isinstance(node, Symmetry):
            p = node.param
            return Symmetry(walk(node.child), SymmetryParam(p.normal, (p.point - offset) / s))
        raise TreeError(f"unknown node type {type(node).__name__}")

    return walk(tree)


def unscale_tree(tree: SymhNode, scale: float, offset) -> SymhNode:
    """Inverse of scale_tree: x -> x * scale + offset."""
    offset = np.asarray(offset, dtype=np.float64)
    s = float(scale)

    def walk(node):
        if isinstance(node, Leaf):
            o = node.obb
            return Leaf(Obb(o.center * s + offset, o.extents * s, o.axis1, o.axis2))
        if isinstance(node, Adjacency):
            return Adjacency(walk(node.left), walk(node.right))
        if isinstance(node, Symmetry):
            p = node.param
            return Symmetry(walk(node.child), SymmetryParam(p.normal, p.point * s + offset))
        raise TreeError(f"unknown node type {type(node).__name__}")

    return walk(tree)


def reflect_subtree(tree: SymhNode, sym: SymmetryParam) -> SymhNode:
    """Mirror an entire subtree (leaves and nested planes) across a plane."""
    if isinstance(tree, Leaf):
        return Leaf(reflect_obb(tree.obb, sym))
    if isinstance(tree, Adjacency):
        return Adjacency(reflect_subtree(tree.left, sym), reflect_subtree(tree.right, sym))
    if isinstance(tree, Symmetry):
        p = tree.param
        n = p.normal - 2.0 * np.dot(p.normal, sym.normal) * sym.normal
        mirrored = SymmetryParam(n / np.linalg.norm(n), reflect_point(p.point, sym))
        return Symmetry(reflect_subtree(tree.child, sym), mirrored)
    raise TreeError(f"unknown node type {type(tree).__name__}")


def strip_symmetry(tree: SymhNode) -> SymhNode:
    """Expand every symmetry node into an adjacency of the child and its
    mirrored copy.  The result represents the same geometry with no
    symmetry nodes (the ablated representation)."""
    if isinstance(tree, Leaf):
        return Leaf(tree.obb)
    if isinstance(tree, Adjacency):
        return Adjacency(strip_symmetry(tree.left), strip_symmetry(tree.right))
    if isinstance(tree, Symmetry):
        base = strip_symmetry(tree.child)
        return Adjacency(base, reflect_subtree(base, tree.param))
    raise TreeError(f"unknown node type {type(tree).__name__}")


def trees_equal(a: SymhNode, b: SymhNode) -> bool:
    """Exact equality of structure and all numeric fields."""
    if a.kind != b.kind:
        return False
    if isinstance(a, Leaf):
        return a.obb == b.obb
    if isinstance(a, Adjacency):
        return trees_equal(a.left, b.left) and trees_equal(a.right, b.right)
    return a.param == b.param and trees_equal(a.child, b.child)
