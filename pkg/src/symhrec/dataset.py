"""Dataset directory layout and train-time sample preparation.

A dataset is `samples/{id}/tree.symh` + `samples/{id}/keypoints.json` plus
a `manifest.json` recording ids, per-sample seeds, split assignment and the
generator configuration.  Trees and keypoints are stored in generator
units; training normalizes each sample into its keypoint bounding-square
frame (the tree's z shares the x/y scale).
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .errors import SymhrecError
from .graphs import MultiGraph, build_graph
from .keypoints import KeypointRecord, frame_of, load_record, save_record
from .seeding import derive_seed
from .synthesis import GenConfig, synthesize_sample
from .tree import SymhNode, load_tree, save_tree, scale_tree, strip_symmetry, unscale_tree

MANIFEST_NAME = "manifest.json"
SPLIT_NAMES = ("train", "val", "test")
# split sizes follow the 1243/160/160 proportions at count 1563
VAL_FRACTION = 160 / 1563
TEST_FRACTION = 160 / 1563


def split_counts(count: int):
    val = int(round(count * VAL_FRACTION))
    test = int(round(count * TEST_FRACTION))
    val = min(val, max(count - 2, 0))
    test = min(test, max(count - val - 1, 0))
    return count - val - test, val, test


def sample_id(index: int) -> str:
    return f"{index:06d}"


def write_dataset(out_dir, cfg: GenConfig, count: int, seed: int, threads: int = 1) -> dict:
    """Generate `count` paired samples and write the dataset directory.

    Deterministic given (cfg, seed) regardless of thread count: each sample
    derives its own seed and writes only its own files.
    """
    if count < 1:
        raise SymhrecError("count must be positive")
    os.makedirs(out_dir, exist_ok=True)
    samples_dir = os.path.join(out_dir, "samples")
    os.makedirs(samples_dir, exist_ok=True)
    n_train, n_val, n_test = split_counts(count)
    entries = []
    for i in range(count):
        split = "train" if i < n_train else ("val" if i < n_train + n_val else "test")
        entries.append({
            "id": sample_id(i),
            "seed": derive_seed(seed, f"sample:{i}"),
            "split": split,
        })

    def emit(entry):
        s = synthesize_sample(cfg, entry["seed"])
        d = os.path.join(samples_dir, entry["id"])
        os.makedirs(d, exist_ok=True)
        save_tree(s.tree, os.path.join(d, "tree.symh"))
        save_record(s.record, os.path.join(d, "keypoints.json"))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(emit, entries))
    else:
        for entry in entries:
            emit(entry)

    manifest = {
        "format": "dataset v1",
        "seed": seed,
        "count": count,
        "splits": {
            "train": [e["id"] for e in entries if e["split"] == "train"],
            "val": [e["id"] for e in entries if e["split"] == "val"],
            "test": [e["id"] for e in entries if e["split"] == "test"],
        },
        "gen_config": asdict(cfg),
        "samples": entries,
    }
    with open(os.path.join(out_dir, MANIFEST_NAME), "w", encoding="ascii") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")
    return manifest


def load_manifest(data_dir) -> dict:
    path = os.path.join(data_dir, MANIFEST_NAME)
    if not os.path.exists(path):
        raise FileNotFoundError(f"no manifest at {path}")
    with open(path, "r", encoding="ascii") as f:
        return json.load(f)


def sample_paths(data_dir, sid: str):
    d = os.path.join(data_dir, "samples", sid)
    return os.path.join(d, "tree.symh"), os.path.join(d, "keypoints.json")


@dataclass
class PreparedSample:
    sample_id: str
    record_raw: KeypointRecord
    tree_raw: SymhNode          # after any representation transform
    graph: MultiGraph
    gt_tree: SymhNode           # normalized frame
    center: np.ndarray          # (2,) frame offset
    scale: float


def normalize_tree(tree: SymhNode, center, scale) -> SymhNode:
    offset = np.array([center[0], center[1], 0.0])
    return scale_tree(tree, scale, offset)


def denormalize_tree(tree: SymhNode, center, scale) -> SymhNode:
    offset = np.array([center[0], center[1], 0.0])
    return unscale_tree(tree, scale, offset)


def prepare_sample(sid: str, record: KeypointRecord, tree: SymhNode,
                   symmetry_free: bool = False) -> PreparedSample:
    if symmetry_free:
        tree = strip_symmetry(tree)
    center, scale = frame_of(record)
    return PreparedSample(
        sample_id=sid,
        record_raw=record,
        tree_raw=tree,
        graph=build_graph(record),
        gt_tree=normalize_tree(tree, center, scale),
        center=center,
        scale=scale,
    )


def load_split(data_dir, split: str, symmetry_free: bool = False) -> list:
    manifest = load_manifest(data_dir)
    if split not in manifest["splits"]:
        raise SymhrecError(f"unknown split {split!r}")
    out = []
    for sid in manifest["splits"][split]:
        tree_path, kp_path = sample_paths(data_dir, sid)
        out.append(prepare_sample(sid, load_record(kp_path), load_tree(tree_path),
                                  symmetry_free=symmetry_free))
    return out
