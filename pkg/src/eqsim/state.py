"""Shared system-state containers: one time step of mass points, and a
time-indexed trajectory of them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass
class MassPointCloud:
    """Positions, velocities, and object ids of all mass points at one step.

    positions/velocities are float32 arrays of shape (N, 2) with positions
    inside the unit square; object_ids are contiguous integers from 0.
    """

    positions: np.ndarray
    velocities: np.ndarray
    object_ids: np.ndarray

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float32)
        self.velocities = np.ascontiguousarray(self.velocities, dtype=np.float32)
        self.object_ids = np.ascontiguousarray(self.object_ids, dtype=np.int64)
        n = self.positions.shape[0]
        if self.positions.shape != (n, 2) or self.velocities.shape != (n, 2):
            raise ValidationError(
                "positions and velocities must both have shape (N, 2)"
            )
        if self.object_ids.shape != (n,):
            raise ValidationError("object_ids must have shape (N,)")
        if not (np.all(np.isfinite(self.positions)) and np.all(np.isfinite(self.velocities))):
            raise ValidationError("cloud contains non-finite values")
        ids = np.unique(self.object_ids)
        if ids.size and not np.array_equal(ids, np.arange(ids.size)):
            raise ValidationError("object_ids must be contiguous from 0")

    @property
    def n_points(self) -> int:
        return self.positions.shape[0]

    @property
    def n_objects(self) -> int:
        return int(self.object_ids.max()) + 1 if self.n_points else 0

    def object_indices(self, obj: int) -> np.ndarray:
        return np.flatnonzero(self.object_ids == obj)

    def copy(self) -> "MassPointCloud":
        return MassPointCloud(
            self.positions.copy(), self.velocities.copy(), self.object_ids.copy()
        )


@dataclass
class Trajectory:
    """An ordered sequence of MassPointClouds with fixed membership.

    ``frames`` has length T+1 for a T-step trajectory; ``dt`` is the frame
    spacing in seconds; ``provenance`` records how the data was produced
    (generator name, config hash, seed, ...).
    """

    frames: list[MassPointCloud]
    dt: float
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.frames:
            raise ValidationError("trajectory must contain at least one frame")
        if self.dt <= 0:
            raise ValidationError(f"dt must be positive, got {self.dt}")
        n = self.frames[0].n_points
        ids = self.frames[0].object_ids
        for k, f in enumerate(self.frames):
            if f.n_points != n or not np.array_equal(f.object_ids, ids):
                raise ValidationError(
                    f"frame {k} changes point count or object membership"
                )

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    @property
    def n_steps(self) -> int:
        return len(self.frames) - 1

    @property
    def n_points(self) -> int:
        return self.frames[0].n_points

    @property
    def n_objects(self) -> int:
        return self.frames[0].n_objects

    def positions_array(self) -> np.ndarray:
        """(n_frames, N, 2) float32 view of all positions."""
        return np.stack([f.positions for f in self.frames])

    def velocities_array(self) -> np.ndarray:
        return np.stack([f.velocities for f in self.frames])
