"""Portable, bit-exact trajectory directories.

Layout::

    <dir>/meta.json        format_version=1, n_frames, n_points, n_objects,
                           dt_seconds, provenance (incl. content_hash)
    <dir>/positions.f32    little-endian float32, (n_frames, n_points, 2),
                           frame-major row-major
    <dir>/velocities.f32   same shape/layout
    <dir>/object_ids.u32   little-endian uint32, (n_points,)

The content hash is sha256 over the three payloads in the order above.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import FormatError
from .state import MassPointCloud, Trajectory

FORMAT_VERSION = 1


def content_hash(positions: np.ndarray, velocities: np.ndarray,
                 object_ids: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(positions, dtype="<f4").tobytes())
    h.update(np.ascontiguousarray(velocities, dtype="<f4").tobytes())
    h.update(np.ascontiguousarray(object_ids, dtype="<u4").tobytes())
    return h.hexdigest()


def write_trajectory(traj: Trajectory, path) -> str:
    """Write ``traj`` to directory ``path``; returns the content hash."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    pos = traj.positions_array().astype("<f4")
    vel = traj.velocities_array().astype("<f4")
    ids = traj.frames[0].object_ids.astype("<u4")
    chash = content_hash(pos, vel, ids)
    provenance = dict(traj.provenance)
    provenance["content_hash"] = chash
    meta = {
        "format_version": FORMAT_VERSION,
        "n_frames": traj.n_frames,
        "n_points": traj.n_points,
        "n_objects": traj.n_objects,
        "dt_seconds": traj.dt,
        "provenance": provenance,
    }
    (path / "positions.f32").write_bytes(pos.tobytes())
    (path / "velocities.f32").write_bytes(vel.tobytes())
    (path / "object_ids.u32").write_bytes(ids.tobytes())
    (path / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return chash


def _read_array(path: Path, dtype: str, count: int, field: str) -> np.ndarray:
    if not path.exists():
        raise FormatError(f"missing array file for {field}: {path.name}")
    raw = np.frombuffer(path.read_bytes(), dtype=dtype)
    if raw.size != count:
        raise FormatError(
            f"{path.name}: expected {count} values for {field}, found {raw.size} "
            f"(meta.json shape mismatch)"
        )
    return raw


def read_trajectory(path) -> Trajectory:
    """Read a trajectory directory; bit-exact inverse of write_trajectory."""
    path = Path(path)
    meta_path = path / "meta.json"
    if not meta_path.exists():
        raise FormatError(f"not a trajectory directory (no meta.json): {path}")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"unparseable meta.json in {path}: {e}") from e
    for key in ("format_version", "n_frames", "n_points", "n_objects", "dt_seconds"):
        if key not in meta:
            raise FormatError(f"meta.json missing key {key!r}")
    if meta["format_version"] != FORMAT_VERSION:
        raise FormatError(
            f"unsupported trajectory format_version {meta['format_version']} "
            f"(expected {FORMAT_VERSION})"
        )
    nf, npts = int(meta["n_frames"]), int(meta["n_points"])
    if nf < 1 or npts < 1:
        raise FormatError("n_frames and n_points must be positive")
    pos = _read_array(path / "positions.f32", "<f4", nf * npts * 2, "positions")
    vel = _read_array(path / "velocities.f32", "<f4", nf * npts * 2, "velocities")
    ids = _read_array(path / "object_ids.u32", "<u4", npts, "object_ids")
    pos = pos.reshape(nf, npts, 2)
    vel = vel.reshape(nf, npts, 2)
    n_objects = int(ids.max()) + 1 if npts else 0
    if n_objects != int(meta["n_objects"]):
        raise FormatError(
            f"object_ids imply {n_objects} objects but meta says {meta['n_objects']}"
        )
    frames = [
        MassPointCloud(pos[k], vel[k], ids.astype(np.int64)) for k in range(nf)
    ]
    return Trajectory(frames=frames, dt=float(meta["dt_seconds"]),
                      provenance=dict(meta.get("provenance", {})))
