"""Hot numeric kernels with two interchangeable implementations.

The JIT path (numba @njit) is used by default; setting the environment
variable SYMHREC_NO_NUMBA=1 (or numba being unavailable) selects the pure
numpy fallback.  Both paths compute identical results; benchmarks/
bench_kernels.py compares them.

Kernel inputs use a packed box layout: centers (K, 3), axes (K, 3, 3) with
axis vectors as rows, and half extents (K, 3).
"""

from __future__ import annotations

import os

import numpy as np


def _numba_requested() -> bool:
    flag = os.environ.get("SYMHREC_NO_NUMBA", "").strip()
    return flag in ("", "0", "false", "False")


def pack_boxes(obbs):
    """Stack a list of Obb into (centers, axes, half_extents) arrays."""
    k = len(obbs)
    centers = np.empty((k, 3))
    axes = np.empty((k, 3, 3))
    half = np.empty((k, 3))
    for i, o in enumerate(obbs):
        centers[i] = o.center
        axes[i] = o.rotation
        half[i] = 0.5 * o.extents
    return centers, axes, half


# -- pure numpy implementations ------------------------------------------


def voxel_occupancy_numpy(origin, step, res, centers, axes, half):
    """Mark grid cells whose center lies inside any box.

    Grid cell (i, j, k) has center origin + (i+0.5, j+0.5, k+0.5) * step.
    Loops over boxes and only tests the sub-grid covered by each box's
    axis-aligned bounds.
    """
    origin = np.asarray(origin, dtype=np.float64)
    step = np.asarray(step, dtype=np.float64)
    occ = np.zeros((res, res, res), dtype=bool)
    coords = [origin[d] + (np.arange(res) + 0.5) * step[d] for d in range(3)]
    for b in range(centers.shape[0]):
        reach = np.abs(axes[b].T) @ half[b]  # box AABB half widths
        lo = centers[b] - reach
        hi = centers[b] + reach
        idx = []
        empty = False
        for d in range(3):
            i0 = int(np.floor((lo[d] - origin[d]) / step[d] - 0.5))
            i1 = int(np.ceil((hi[d] - origin[d]) / step[d] - 0.5))
            i0 = max(i0, 0)
            i1 = min(i1, res - 1)
            if i1 < i0:
                empty = True
                break
            idx.append((i0, i1))
        if empty:
            continue
        (x0, x1), (y0, y1), (z0, z1) = idx
        gx, gy, gz = np.meshgrid(
            coords[0][x0 : x1 + 1], coords[1][y0 : y1 + 1], coords[2][z0 : z1 + 1],
            indexing="ij",
        )
        pts = np.stack([gx, gy, gz], axis=-1) - centers[b]
        local = pts @ axes[b].T
        inside = np.all(np.abs(local) <= half[b], axis=-1)
        occ[x0 : x1 + 1, y0 : y1 + 1, z0 : z1 + 1] |= inside
    return occ


def directed_min_dists_numpy(a, b):
    """For each point of a, the distance to the nearest point of b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)
    return np.sqrt(d2.min(axis=1))


# -- numba implementations -------------------------------------------------

NUMBA_AVAILABLE = False
if _numba_requested():
    try:
        from numba import njit

        NUMBA_AVAILABLE = True
    except ImportError:  # fall back silently; dispatch below handles it
        NUMBA_AVAILABLE = False

if NUMBA_AVAILABLE:

    @njit(cache=True, nogil=True)
    def _voxel_occupancy_jit(origin, step, res, centers, axes, half):  # pragma: no cover
        occ = np.zeros((res, res, res), dtype=np.bool_)
        nb = centers.shape[0]
        for b in range(nb):
            # axis-aligned reach of the box limits the scanned sub-grid
            rx = (
                abs(axes[b, 0, 0]) * half[b, 0]
                + abs(axes[b, 1, 0]) * half[b, 1]
                + abs(axes[b, 2, 0]) * half[b, 2]
            )
            ry = (
                abs(axes[b, 0, 1]) * half[b, 0]
                + abs(axes[b, 1, 1]) * half[b, 1]
                + abs(axes[b, 2, 1]) * half[b, 2]
            )
            rz = (
                abs(axes[b, 0, 2]) * half[b, 0]
                + abs(axes[b, 1, 2]) * half[b, 1]
                + abs(axes[b, 2, 2]) * half[b, 2]
            )
            x0 = max(int(np.floor((centers[b, 0] - rx - origin[0]) / step[0] - 0.5)), 0)
            x1 = min(int(np.ceil((centers[b, 0] + rx - origin[0]) / step[0] - 0.5)), res - 1)
            y0 = max(int(np.floor((centers[b, 1] - ry - origin[1]) / step[1] - 0.5)), 0)
            y1 = min(int(np.ceil((centers[b, 1] + ry - origin[1]) / step[1] - 0.5)), res - 1)
            z0 = max(int(np.floor((centers[b, 2] - rz - origin[2]) / step[2] - 0.5)), 0)
            z1 = min(int(np.ceil((centers[b, 2] + rz - origin[2]) / step[2] - 0.5)), res - 1)
            for i in range(x0, x1 + 1):
                px = origin[0] + (i + 0.5) * step[0] - centers[b, 0]
                for j in range(y0, y1 + 1):
                    py = origin[1] + (j + 0.5) * step[1] - centers[b, 1]
                    for k in range(z0, z1 + 1):
                        if occ[i, j, k]:
                            continue
                        pz = origin[2] + (k + 0.5) * step[2] - centers[b, 2]
                        u = px * axes[b, 0, 0] + py * axes[b, 0, 1] + pz * axes[b, 0, 2]
                        if abs(u) > half[b, 0]:
                            continue
                        v = px * axes[b, 1, 0] + py * axes[b, 1, 1] + pz * axes[b, 1, 2]
                        if abs(v) > half[b, 1]:
                            continue
                        w = px * axes[b, 2, 0] + py * axes[b, 2, 1] + pz * axes[b, 2, 2]
                        if abs(w) <= half[b, 2]:
                            occ[i, j, k] = True
        return occ

    @njit(cache=True, nogil=True)
    def _directed_min_dists_jit(a, b):  # pragma: no cover
        n = a.shape[0]
        m = b.shape[0]
        out = np.empty(n)
        for i in range(n):
            best = np.inf
            for j in range(m):
                dx = a[i, 0] - b[j, 0]
                dy = a[i, 1] - b[j, 1]
                dz = a[i, 2] - b[j, 2]
                d2 = dx * dx + dy * dy + dz * dz
                if d2 < best:
                    best = d2
            out[i] = np.sqrt(best)
        return out

    def voxel_occupancy_numba(origin, step, res, centers, axes, half):
        return _voxel_occupancy_jit(
            np.ascontiguousarray(origin, dtype=np.float64),
            np.ascontiguousarray(step, dtype=np.float64),
            int(res),
            np.ascontiguousarray(centers, dtype=np.float64),
            np.ascontiguousarray(axes, dtype=np.float64),
            np.ascontiguousarray(half, dtype=np.float64),
        )

    def directed_min_dists_numba(a, b):
        return _directed_min_dists_jit(
            np.ascontiguousarray(a, dtype=np.float64),
            np.ascontiguousarray(b, dtype=np.float64),
        )


USING_NUMBA = NUMBA_AVAILABLE

if USING_NUMBA:
    voxel_occupancy = voxel_occupancy_numba
    directed_min_dists = directed_min_dists_numba
else:
    voxel_occupancy = voxel_occupancy_numpy
    directed_min_dists = directed_min_dists_numpy
