"""Uniform-grid broad phase for fixed-radius point-pair queries.

Cell size equals the query radius, so every qualifying pair is found in the
3x3 cell neighborhood; results are exact (each candidate is distance-checked
with the same arithmetic a brute-force scan would use).
"""

from __future__ import annotations

import numpy as np


def pairs_within(points: np.ndarray, radius: float, ids=None) -> tuple[np.ndarray, np.ndarray]:
    """All unordered pairs (i, j), i < j, with ||p_i - p_j|| < radius.

    If ``ids`` is given, only cross-id pairs are returned. Distances compare
    strictly in float64. Output pairs are sorted by (i, j).
    """
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    if n < 2:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    cell = float(radius)
    keys = np.floor(pts / cell).astype(np.int64)
    buckets: dict[tuple[int, int], list[int]] = {}
    for i in range(n):
        buckets.setdefault((keys[i, 0], keys[i, 1]), []).append(i)

    r2 = radius * radius
    out_i: list[np.ndarray] = []
    out_j: list[np.ndarray] = []
    for i in range(n):
        kx, ky = keys[i]
        cand: list[int] = []
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                cand.extend(buckets.get((kx + dx, ky + dy), ()))
        cand = np.asarray(cand, dtype=np.int64)
        cand = cand[cand > i]
        if ids is not None:
            cand = cand[np.asarray(ids)[cand] != np.asarray(ids)[i]]
        if cand.size == 0:
            continue
        diff = pts[cand] - pts[i]
        close = cand[np.einsum("kj,kj->k", diff, diff) < r2]
        if close.size:
            out_i.append(np.full(close.size, i, dtype=np.int64))
            out_j.append(close)
    if not out_i:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    ii = np.concatenate(out_i)
    jj = np.concatenate(out_j)
    order = np.lexsort((jj, ii))
    return ii[order], jj[order]


def min_cross_distance(points: np.ndarray, ids: np.ndarray, probe_radius: float) -> float:
    """Smallest cross-id pair distance, or +inf if none lie within
    ``probe_radius`` of each other."""
    ii, jj = pairs_within(points, probe_radius, ids=ids)
    if ii.size == 0:
        return float("inf")
    pts = np.asarray(points, dtype=np.float64)
    d = np.linalg.norm(pts[ii] - pts[jj], axis=1)
    return float(d.min())
