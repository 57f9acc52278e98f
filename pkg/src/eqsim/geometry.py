"""Planar rigid motions, deterministic point-cloud sampling, and invariant
pairwise attributes.

Everything here is pure and deterministic. Distance computations promote to
float64 internally so that index-valued outputs (sampling orders, neighbor
lists) are stable when the whole cloud is rotated or translated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

TWO_PI = 2.0 * math.pi

# Vectors shorter than this are treated as zero-length in angle/cosine
# computations (objects dropped from rest have exactly-zero velocities, so
# this path is hot).
ZERO_VECTOR_NORM = 1e-150


def wrap_angle(theta):
    """Wrap angle(s) to (-pi, pi]. Accepts scalars or arrays."""
    arr = np.asarray(theta, dtype=np.float64)
    wrapped = np.pi - np.mod(np.pi - arr, TWO_PI)
    if np.ndim(theta) == 0:
        return float(wrapped)
    return wrapped


def _as_points(x, name="points"):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1 and arr.shape[0] == 2:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValidationError(f"{name} must have shape (N, 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class GroupElement:
    """A planar rigid motion: rotate by ``rotation_angle`` about the origin,
    then translate by ``translation``.

    ``rotation_angle`` is stored wrapped to (-pi, pi]; the translation-only
    subgroup is represented by ``rotation_angle == 0``.
    """

    rotation_angle: float = 0.0
    translation: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        ang = float(self.rotation_angle)
        tx, ty = (float(self.translation[0]), float(self.translation[1]))
        if not (math.isfinite(ang) and math.isfinite(tx) and math.isfinite(ty)):
            raise ValidationError("group element parameters must be finite")
        object.__setattr__(self, "rotation_angle", wrap_angle(ang))
        object.__setattr__(self, "translation", (tx, ty))

    @classmethod
    def identity(cls) -> "GroupElement":
        return cls(0.0, (0.0, 0.0))

    @property
    def rotation_matrix(self) -> np.ndarray:
        c, s = math.cos(self.rotation_angle), math.sin(self.rotation_angle)
        return np.array([[c, -s], [s, c]], dtype=np.float64)

    def compose(self, other: "GroupElement") -> "GroupElement":
        """Return self o other (``other`` acts first)."""
        r = self.rotation_matrix
        t = r @ np.asarray(other.translation) + np.asarray(self.translation)
        return GroupElement(self.rotation_angle + other.rotation_angle, (t[0], t[1]))

    def inverse(self) -> "GroupElement":
        rinv = self.rotation_matrix.T
        t = -(rinv @ np.asarray(self.translation))
        return GroupElement(-self.rotation_angle, (t[0], t[1]))

    @property
    def is_translation(self) -> bool:
        return self.rotation_angle == 0.0

    # -- actions ----------------------------------------------------------
    def act_on_points(self, positions) -> np.ndarray:
        """x -> R x + t."""
        pts = _as_points(positions, "positions")
        return pts @ self.rotation_matrix.T + np.asarray(self.translation)

    def act_on_vectors(self, vectors) -> np.ndarray:
        """Free vectors (velocities): v -> R v, translation ignored."""
        vec = _as_points(vectors, "vectors")
        return vec @ self.rotation_matrix.T

    def act_on_poses(self, positions, orientations):
        """(x, th) -> (R x + t, wrap(th + angle))."""
        pos = self.act_on_points(positions)
        theta = np.asarray(orientations, dtype=np.float64)
        if not np.all(np.isfinite(theta)):
            raise ValidationError("orientations contain non-finite values")
        return pos, wrap_angle(theta + self.rotation_angle)


@dataclass(frozen=True)
class Pose2:
    """A 2D position plus an orientation wrapped to (-pi, pi]."""

    position: tuple[float, float]
    orientation: float = 0.0

    def __post_init__(self):
        x, y = (float(self.position[0]), float(self.position[1]))
        th = float(self.orientation)
        if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(th)):
            raise ValidationError("pose fields must be finite")
        object.__setattr__(self, "position", (x, y))
        object.__setattr__(self, "orientation", wrap_angle(th))


def apply_group(g: GroupElement, positions=None, vectors=None, poses=None):
    """Apply ``g`` to positions, free vectors, and/or pose arrays.

    ``poses`` is a ``(positions, orientations)`` pair of arrays. Returns a
    tuple ``(positions, vectors, poses)`` of transformed copies in the same
    order, with ``None`` passed through for absent inputs.
    """
    out_pos = None if positions is None else g.act_on_points(positions)
    out_vec = None if vectors is None else g.act_on_vectors(vectors)
    out_poses = None
    if poses is not None:
        out_poses = g.act_on_poses(poses[0], poses[1])
    return out_pos, out_vec, out_poses


def farthest_point_sample(points, n_samples: int) -> np.ndarray:
    """Greedy farthest-point sampling.

    The seed is the point farthest from the cloud centroid; each subsequent
    pick maximizes the minimum distance to the selected set. Ties break to
    the lowest index at every step (np.argmax semantics), so the result is
    deterministic and stable under rigid motions of the cloud.
    """
    pts = _as_points(points)
    n = pts.shape[0]
    if not (1 <= n_samples <= n):
        raise ValidationError(
            f"n_samples must be in [1, {n}], got {n_samples}"
        )
    centroid = pts.mean(axis=0)
    d2 = np.einsum("ij,ij->i", pts - centroid, pts - centroid)
    first = int(np.argmax(d2))
    selected = np.empty(n_samples, dtype=np.int64)
    selected[0] = first
    diff = pts - pts[first]
    min_d2 = np.einsum("ij,ij->i", diff, diff)
    for k in range(1, n_samples):
        nxt = int(np.argmax(min_d2))
        selected[k] = nxt
        diff = pts - pts[nxt]
        np.minimum(min_d2, np.einsum("ij,ij->i", diff, diff), out=min_d2)
    return selected


@dataclass
class NeighborList:
    """Fixed-radius neighbor indices for a set of center points.

    ``indices`` has shape (n_centers, max_k), ordered nearest-first; when a
    center has fewer than ``max_k`` in-radius neighbors the first (nearest)
    index is repeated as padding. ``counts`` holds the true neighbor counts.
    """

    indices: np.ndarray
    counts: np.ndarray
    radius: float
    max_k: int
    centers: np.ndarray = field(default=None)


def ball_query(centers, points, radius: float, max_k: int) -> NeighborList:
    """For each center index, the up-to-``max_k`` nearest points within
    ``radius`` (inclusive), nearest-first, distance ties broken by index.

    Centers are indices into ``points``, so the center itself (distance 0)
    is always present and padding is guaranteed non-empty.
    """
    pts = _as_points(points)
    centers = np.asarray(centers, dtype=np.int64)
    if radius <= 0:
        raise ValidationError(f"radius must be positive, got {radius}")
    if max_k < 1:
        raise ValidationError(f"max_k must be >= 1, got {max_k}")
    if centers.ndim != 1:
        raise ValidationError("centers must be a 1-D index array")
    n = pts.shape[0]
    if centers.size and (centers.min() < 0 or centers.max() >= n):
        raise ValidationError("center indices out of range")

    r2 = float(radius) ** 2
    # (S, N) pairwise squared distances; desk-scale clouds keep this small.
    diff = pts[centers, None, :] - pts[None, :, :]
    d2 = np.einsum("snk,snk->sn", diff, diff)
    order = np.argsort(d2, axis=1, kind="stable")
    d2_sorted = np.take_along_axis(d2, order, axis=1)
    out = np.empty((centers.shape[0], max_k), dtype=np.int64)
    counts = np.empty(centers.shape[0], dtype=np.int64)
    for s in range(centers.shape[0]):
        in_r = order[s][d2_sorted[s] <= r2]
        k = min(in_r.size, max_k)
        counts[s] = k
        out[s, :k] = in_r[:k]
        if k < max_k:
            out[s, k:] = in_r[0]
    return NeighborList(out, counts, float(radius), int(max_k), centers=centers)


def _angle_between(a: np.ndarray, b: np.ndarray) -> float:
    na = math.hypot(a[0], a[1])
    nb = math.hypot(b[0], b[1])
    if na < ZERO_VECTOR_NORM or nb < ZERO_VECTOR_NORM:
        return 0.0
    cross = a[0] * b[1] - a[1] * b[0]
    dot = a[0] * b[0] + a[1] * b[1]
    return math.atan2(abs(cross), dot)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = math.hypot(a[0], a[1])
    nb = math.hypot(b[0], b[1])
    if na < ZERO_VECTOR_NORM or nb < ZERO_VECTOR_NORM:
        return 0.0
    return float(np.clip((a[0] * b[0] + a[1] * b[1]) / (na * nb), -1.0, 1.0))


def rotation_invariants(F, vF, Q, vQ) -> np.ndarray:
    """Five scalars describing a (center, neighbor) pair of points with
    velocities, unchanged under any simultaneous rotation+translation of the
    points (with rotation of the velocities):

    [angle(vF, F-Q), angle(vQ, F-Q), ||F-Q||^2, ||vF-vQ||^2, cos(F-Q, vF-vQ)]

    Angles lie in [0, pi]; any angle or cosine involving a zero-length
    vector is 0.
    """
    F = np.asarray(F, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    vF = np.asarray(vF, dtype=np.float64)
    vQ = np.asarray(vQ, dtype=np.float64)
    for name, v in (("F", F), ("vF", vF), ("Q", Q), ("vQ", vQ)):
        if v.shape != (2,) or not np.all(np.isfinite(v)):
            raise ValidationError(f"{name} must be a finite 2-vector")
    rel = F - Q
    dv = vF - vQ
    return np.array(
        [
            _angle_between(vF, rel),
            _angle_between(vQ, rel),
            rel[0] ** 2 + rel[1] ** 2,
            dv[0] ** 2 + dv[1] ** 2,
            _cosine(rel, dv),
        ],
        dtype=np.float64,
    )


def se2_bi_invariant(pose_i: Pose2, pose_j: Pose2) -> np.ndarray:
    """Relative pose of ``pose_j`` expressed in ``pose_i``'s frame:
    [R(-th_i)(x_j - x_i), wrap(th_j - th_i)].

    Invariant under any simultaneous rotation+translation of both poses;
    zero for equal poses.
    """
    xi = np.asarray(pose_i.position)
    xj = np.asarray(pose_j.position)
    c = math.cos(-pose_i.orientation)
    s = math.sin(-pose_i.orientation)
    dx, dy = xj[0] - xi[0], xj[1] - xi[1]
    return np.array(
        [c * dx - s * dy, s * dx + c * dy, wrap_angle(pose_j.orientation - pose_i.orientation)],
        dtype=np.float64,
    )


def translation_pair_attribute(pose_i: Pose2, pose_j: Pose2) -> np.ndarray:
    """Pairwise attribute for the translation-only group variant:
    [x_j - x_i, th_i, th_j]. Orientations are not acted on by translations,
    so exposing them raw keeps the attribute invariant while maximizing
    information.
    """
    xi = np.asarray(pose_i.position)
    xj = np.asarray(pose_j.position)
    return np.array(
        [xj[0] - xi[0], xj[1] - xi[1], pose_i.orientation, pose_j.orientation],
        dtype=np.float64,
    )
