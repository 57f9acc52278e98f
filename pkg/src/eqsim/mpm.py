"""Ground-truth generator: 2D moving-least-squares material point method with
a fixed-corotated elastic model, plus scene assembly for falling/colliding
deformable objects.

The solver is vectorized numpy in float64; recorded frames are float32.
Quadratic B-spline transfers make an isolated body in free fall exact up to
roundoff, which the sanity checks rely on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import shapes
from .errors import GenerationError, NumericalError, ValidationError
from .spatialhash import min_cross_distance
from .state import MassPointCloud, Trajectory


@dataclass
class MpmConfig:
    """Simulator constants. Defaults give a visibly deforming, rebounding
    block within a 60-frame x 0.002 s horizon."""

    grid_resolution: int = 64
    substeps: int = 20
    youngs_modulus: float = 1.0e4
    poisson_ratio: float = 0.2
    density: float = 1.0
    gravity: float = 50.0
    boundary: str = "separate"  # "separate": zero inward normal; "sticky": zero all
    boundary_cells: int = 3
    cfl_safety: float = 1.0

    def __post_init__(self):
        if self.grid_resolution < 16:
            raise ValidationError("grid_resolution must be >= 16")
        if self.substeps < 1:
            raise ValidationError("substeps must be >= 1")
        if not (0.0 <= self.poisson_ratio < 0.5):
            raise ValidationError("poisson_ratio must lie in [0, 0.5)")
        if self.youngs_modulus <= 0 or self.density <= 0:
            raise ValidationError("youngs_modulus and density must be positive")
        if self.boundary not in ("separate", "sticky"):
            raise ValidationError(f"unknown boundary mode {self.boundary!r}")

    @property
    def dx(self) -> float:
        return 1.0 / self.grid_resolution

    @property
    def wave_speed(self) -> float:
        return math.sqrt(self.youngs_modulus / self.density)

    @property
    def lame(self) -> tuple[float, float]:
        e, nu = self.youngs_modulus, self.poisson_ratio
        mu = e / (2 * (1 + nu))
        lam = e * nu / ((1 + nu) * (1 - 2 * nu))
        return mu, lam

    def min_substeps(self, frame_dt: float) -> int:
        return max(1, math.ceil(frame_dt * self.wave_speed / (self.cfl_safety * self.dx)))

    def check_cfl(self, frame_dt: float):
        need = self.min_substeps(frame_dt)
        if self.substeps < need:
            raise ValidationError(
                f"substeps={self.substeps} violates the CFL bound for "
                f"dt={frame_dt}: need >= {need}"
            )

    @property
    def floor_coordinate(self) -> float:
        """Hard lower clamp for particle positions."""
        return self.dx


@dataclass
class SceneConfig:
    """Scene randomization for falling-object scenes."""

    n_objects: int = 2
    points_per_object: int = 500
    n_frames: int = 60
    dt: float = 0.002
    families: tuple = ("disk", "convex", "star", "rounded_rect")
    object_scale: tuple = (0.07, 0.12)   # half-extent range
    drop_height: tuple = (0.30, 0.58)
    x_range: tuple = (0.18, 0.82)
    init_speed: tuple = (0.0, 0.0)       # sampled speed magnitude range
    placement_gap: float = 0.03
    placement_retries: int = 200
    require_contact: bool = True
    contact_distance: float = 0.05
    contact_attempts: int = 8


@dataclass
class MpmState:
    """Internal particle state advanced by mpm_step."""

    x: np.ndarray        # (N, 2) positions
    v: np.ndarray        # (N, 2) velocities
    C: np.ndarray        # (N, 2, 2) APIC affine velocity
    F: np.ndarray        # (N, 2, 2) deformation gradient
    object_ids: np.ndarray

    @classmethod
    def from_cloud(cls, positions, velocities, object_ids) -> "MpmState":
        n = positions.shape[0]
        return cls(
            x=np.array(positions, dtype=np.float64),
            v=np.array(velocities, dtype=np.float64),
            C=np.zeros((n, 2, 2)),
            F=np.tile(np.eye(2), (n, 1, 1)),
            object_ids=np.asarray(object_ids, dtype=np.int64),
        )

    def to_cloud(self) -> MassPointCloud:
        return MassPointCloud(
            self.x.astype(np.float32), self.v.astype(np.float32), self.object_ids
        )


def _polar_rotation(F: np.ndarray) -> np.ndarray:
    """Rotation factor of the 2x2 polar decomposition, batched."""
    theta = np.arctan2(F[:, 1, 0] - F[:, 0, 1], F[:, 0, 0] + F[:, 1, 1])
    c, s = np.cos(theta), np.sin(theta)
    R = np.empty_like(F)
    R[:, 0, 0] = c
    R[:, 0, 1] = -s
    R[:, 1, 0] = s
    R[:, 1, 1] = c
    return R


def _substep(state: MpmState, cfg: MpmConfig, dt: float):
    g = cfg.grid_resolution
    dx = cfg.dx
    inv_dx = float(g)
    mu, lam = cfg.lame
    p_vol = (dx * 0.5) ** 2
    p_mass = p_vol * cfg.density
    n = state.x.shape[0]

    Xp = state.x * inv_dx
    base = np.floor(Xp - 0.5).astype(np.int64)
    fx = Xp - base
    w = (
        0.5 * (1.5 - fx) ** 2,
        0.75 - (fx - 1.0) ** 2,
        0.5 * (fx - 0.5) ** 2,
    )

    # Fixed-corotated stress on the updated deformation gradient.
    eye = np.eye(2)
    state.F = np.einsum("nij,njk->nik", eye + dt * state.C, state.F)
    J = state.F[:, 0, 0] * state.F[:, 1, 1] - state.F[:, 0, 1] * state.F[:, 1, 0]
    R = _polar_rotation(state.F)
    FT = np.swapaxes(state.F, 1, 2)
    stress = 2.0 * mu * np.einsum("nij,njk->nik", state.F - R, FT)
    stress[:, 0, 0] += lam * J * (J - 1.0)
    stress[:, 1, 1] += lam * J * (J - 1.0)
    affine = (-dt * 4.0 * inv_dx * inv_dx * p_vol) * stress + p_mass * state.C

    grid_m = np.zeros(g * g)
    grid_px = np.zeros(g * g)
    grid_py = np.zeros(g * g)
    mom0 = p_mass * state.v  # (N, 2)
    for i in range(3):
        for j in range(3):
            dpos = (np.stack([i - fx[:, 0], j - fx[:, 1]], axis=1)) * dx
            weight = w[i][:, 0] * w[j][:, 1]
            idx = (base[:, 0] + i) * g + (base[:, 1] + j)
            mom = mom0 + np.einsum("nij,nj->ni", affine, dpos)
            grid_m += np.bincount(idx, weights=weight * p_mass, minlength=g * g)
            grid_px += np.bincount(idx, weights=weight * mom[:, 0], minlength=g * g)
            grid_py += np.bincount(idx, weights=weight * mom[:, 1], minlength=g * g)

    grid_vx = np.zeros(g * g)
    grid_vy = np.zeros(g * g)
    active = grid_m > 0
    grid_vx[active] = grid_px[active] / grid_m[active]
    grid_vy[active] = grid_py[active] / grid_m[active] - dt * cfg.gravity

    gi = np.arange(g * g) // g
    gj = np.arange(g * g) % g
    nb = cfg.boundary_cells
    lo_x, hi_x = gi < nb, gi > g - 1 - nb
    lo_y, hi_y = gj < nb, gj > g - 1 - nb
    if cfg.boundary == "sticky":
        wall = lo_x | hi_x | lo_y | hi_y
        grid_vx[wall] = 0.0
        grid_vy[wall] = 0.0
    else:
        grid_vx[lo_x & (grid_vx < 0)] = 0.0
        grid_vx[hi_x & (grid_vx > 0)] = 0.0
        grid_vy[lo_y & (grid_vy < 0)] = 0.0
        grid_vy[hi_y & (grid_vy > 0)] = 0.0

    new_v = np.zeros((n, 2))
    new_C = np.zeros((n, 2, 2))
    coeff = 4.0 * inv_dx * inv_dx
    for i in range(3):
        for j in range(3):
            dpos = (np.stack([i - fx[:, 0], j - fx[:, 1]], axis=1)) * dx
            weight = w[i][:, 0] * w[j][:, 1]
            idx = (base[:, 0] + i) * g + (base[:, 1] + j)
            gv = np.stack([grid_vx[idx], grid_vy[idx]], axis=1)
            new_v += weight[:, None] * gv
            new_C += (coeff * weight)[:, None, None] * np.einsum(
                "ni,nj->nij", gv, dpos
            )

    state.v = new_v
    state.C = new_C
    state.x = state.x + dt * new_v
    # Hard containment: keeps B-spline stencils in range and guarantees the
    # published invariant that no particle leaves the unit square.
    np.clip(state.x[:, 0], dx, 1.0 - 2.0 * dx, out=state.x[:, 0])
    np.clip(state.x[:, 1], dx, 1.0 - 2.0 * dx, out=state.x[:, 1])


def mpm_step(state: MpmState, cfg: MpmConfig, frame_dt: float) -> MpmState:
    """Advance one recorded frame (cfg.substeps solver substeps).

    Mutates and returns ``state``. Raises NumericalError if any field goes
    non-finite (instability).
    """
    cfg.check_cfl(frame_dt)
    dt = frame_dt / cfg.substeps
    for s in range(cfg.substeps):
        _substep(state, cfg, dt)
        if not (
            np.all(np.isfinite(state.x))
            and np.all(np.isfinite(state.v))
            and np.all(np.isfinite(state.F))
        ):
            raise NumericalError(
                f"MPM instability at substep {s}: max |v| = "
                f"{np.nanmax(np.abs(state.v)):.3e}; reduce dt or stiffness"
            )
    return state


def kinetic_energy(cloud: MassPointCloud, cfg: MpmConfig) -> float:
    p_mass = (cfg.dx * 0.5) ** 2 * cfg.density
    v = cloud.velocities.astype(np.float64)
    return float(0.5 * p_mass * np.sum(v * v))


def first_contact_frame(traj: Trajectory, cfg: MpmConfig,
                        inter_distance: float | None = None,
                        floor_band: float | None = None) -> int | None:
    """Index of the first frame with inter-object proximity or floor
    proximity, or None. Conservative defaults cover the grid coupling range.
    """
    dxc = cfg.dx
    inter = inter_distance if inter_distance is not None else 3.0 * dxc
    band = floor_band if floor_band is not None else (cfg.boundary_cells + 2) * dxc
    for k, f in enumerate(traj.frames):
        if float(f.positions[:, 1].min()) < band:
            return k
        if f.n_objects > 1 and math.isfinite(
            min_cross_distance(f.positions, f.object_ids, inter)
        ):
            return k
    return None


def _place_objects(rng, n_objects, points_per_object, scene: SceneConfig):
    placed_pts = []
    placed_vel = []
    for k in range(n_objects):
        family = str(rng.choice(scene.families))
        shape_seed = int(rng.integers(0, 2**31 - 1))
        pts = shapes.sample_shape(shape_seed, family, points_per_object)
        scale = rng.uniform(*scene.object_scale)
        ang = rng.uniform(-np.pi, np.pi)
        c, s = np.cos(ang), np.sin(ang)
        pts = (pts * (2.0 * scale)) @ np.array([[c, s], [-s, c]])
        x_lo, x_hi = scene.x_range[0] + scale, scene.x_range[1] - scale
        y_lo = max(scene.drop_height[0], 0.1 + scale)
        y_hi = min(scene.drop_height[1], 1.0 - 0.1 - scale)
        if x_lo >= x_hi or y_lo >= y_hi:
            raise GenerationError(
                f"object of scale {scale:.3f} cannot fit the configured ranges"
            )
        for _ in range(scene.placement_retries):
            cx = rng.uniform(x_lo, x_hi)
            cy = rng.uniform(y_lo, y_hi)
            cand = pts + np.array([cx, cy])
            if placed_pts:
                other = np.concatenate(placed_pts)
                d2 = (
                    (cand[:, None, 0] - other[None, :, 0]) ** 2
                    + (cand[:, None, 1] - other[None, :, 1]) ** 2
                )
                if d2.min() < (scene.placement_gap + scene.contact_distance) ** 2:
                    continue
            break
        else:
            raise GenerationError(
                f"could not place object {k} without overlap after "
                f"{scene.placement_retries} tries"
            )
        placed_pts.append(cand)
        speed = rng.uniform(*scene.init_speed)
        direction = rng.uniform(-np.pi, np.pi)
        placed_vel.append(
            np.tile([speed * np.cos(direction), speed * np.sin(direction)],
                    (points_per_object, 1))
        )
    positions = np.concatenate(placed_pts)
    velocities = np.concatenate(placed_vel)
    object_ids = np.repeat(np.arange(n_objects), points_per_object)
    return positions, velocities, object_ids


def generate_trajectory(seed: int, n_objects: int | None = None,
                        points_per_object: int | None = None,
                        n_frames: int | None = None,
                        cfg: MpmConfig | None = None,
                        scene: SceneConfig | None = None,
                        provenance: dict | None = None) -> Trajectory:
    """Generate one falling/colliding scene.

    Randomized shapes, heights, and orientations are dropped under gravity;
    frames are recorded every ``scene.dt`` seconds. If the scene fails the
    contact predicate within the horizon, generation retries with a
    deterministically derived sub-seed (recorded as ``attempt``).
    """
    cfg = cfg if cfg is not None else MpmConfig()
    scene = scene if scene is not None else SceneConfig()
    if n_objects is not None:
        scene = replace(scene, n_objects=n_objects)
    if points_per_object is not None:
        scene = replace(scene, points_per_object=points_per_object)
    if n_frames is not None:
        scene = replace(scene, n_frames=n_frames)
    if scene.n_objects < 1 or scene.points_per_object < 3:
        raise ValidationError("need >= 1 object and >= 3 points per object")
    if scene.n_frames < 1:
        raise ValidationError("n_frames must be >= 1")
    cfg.check_cfl(scene.dt)

    last_traj = None
    for attempt in range(scene.contact_attempts):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFF, spawn_key=(attempt,))
        )
        positions, velocities, object_ids = _place_objects(
            rng, scene.n_objects, scene.points_per_object, scene
        )
        state = MpmState.from_cloud(positions, velocities, object_ids)
        frames = [state.to_cloud()]
        for _ in range(scene.n_frames - 1):
            mpm_step(state, cfg, scene.dt)
            frames.append(state.to_cloud())
        prov = dict(provenance or {})
        prov.update({"generator": "mls-mpm-2d", "seed": int(seed), "attempt": attempt})
        traj = Trajectory(frames=frames, dt=scene.dt, provenance=prov)
        if not scene.require_contact:
            return traj
        touched = first_contact_frame(
            traj, cfg,
            inter_distance=scene.contact_distance,
            floor_band=(cfg.boundary_cells + 1) * cfg.dx,
        )
        if touched is not None:
            return traj
        last_traj = traj
    raise GenerationError(
        f"no contact within {scene.n_frames} frames after "
        f"{scene.contact_attempts} attempts (seed {seed}); "
        f"last min height {min(f.positions[:, 1].min() for f in last_traj.frames):.3f}"
    )
