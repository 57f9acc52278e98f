"""Equivariant point-cloud encoder: per-object hierarchical set abstraction
(farthest-point sampling + ball query + per-point MLP + max pool) producing
latent control points with velocity-derived orientations.

Group handling:
  - "translation" variant: per-neighbor attributes are relative positions
    and relative velocities (translation-invariant).
  - "se2" variant: attributes are five rotation+translation invariant
    scalars of the (center, neighbor) point/velocity pair, with the two
    angle invariants embedded as (sin, cos).

Sampling and grouping indices come from the deterministic float64 geometry
routines, so they are identical under any group action on the cloud.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from . import geometry
from .errors import ValidationError
from .state import MassPointCloud

GROUP_VARIANTS = ("translation", "se2")
ZERO_SPEED = 1e-8


@dataclass
class EncoderConfig:
    """Per-layer set-abstraction hyperparameters."""

    mlp_dims: list = field(
        default_factory=lambda: [[32, 32, 64], [64, 64, 128], [128, 128, 32]]
    )
    n_samples: list = field(default_factory=lambda: [512, 128, 16])
    radii: list = field(default_factory=lambda: [0.025, 0.05, 0.1])
    max_neighbors: list = field(default_factory=lambda: [32, 64, 128])

    def __post_init__(self):
        n = len(self.mlp_dims)
        if not (len(self.n_samples) == len(self.radii) == len(self.max_neighbors) == n):
            raise ValidationError("encoder per-layer lists must share length")
        if n < 1:
            raise ValidationError("encoder needs at least one layer")
        for d in self.mlp_dims:
            if not d:
                raise ValidationError("empty MLP dim list")

    @property
    def n_layers(self) -> int:
        return len(self.mlp_dims)

    @property
    def context_dim(self) -> int:
        return self.mlp_dims[-1][-1]

    @property
    def points_per_object(self) -> int:
        return self.n_samples[-1]


@dataclass
class LayerPlan:
    centers: np.ndarray    # (S,) indices into the previous layer's points
    neighbors: np.ndarray  # (S, K) indices into the previous layer's points


@dataclass
class ObjectPlan:
    point_indices: np.ndarray   # (n_obj,) global indices of this object's points
    layers: list                # list[LayerPlan]
    source_local: np.ndarray    # (M_obj,) final centers as object-local indices

    @property
    def source_global(self) -> np.ndarray:
        return self.point_indices[self.source_local]


@dataclass
class GroupingPlan:
    objects: list  # list[ObjectPlan], ordered by object id

    @property
    def source_indices(self) -> np.ndarray:
        return np.concatenate([o.source_global for o in self.objects])

    @property
    def latent_object_ids(self) -> np.ndarray:
        return np.concatenate(
            [np.full(o.source_local.shape[0], k, dtype=np.int64)
             for k, o in enumerate(self.objects)]
        )


def plan_grouping(positions: np.ndarray, object_ids: np.ndarray,
                  cfg: EncoderConfig) -> GroupingPlan:
    """Compute FPS/ball-query index plans per object.

    Layer sample counts are clamped to the points available in the object,
    so small clouds remain encodable.
    """
    object_ids = np.asarray(object_ids)
    n_objects = int(object_ids.max()) + 1 if object_ids.size else 0
    if n_objects < 1:
        raise ValidationError("cloud has no objects")
    objects = []
    for obj in range(n_objects):
        idx = np.flatnonzero(object_ids == obj)
        if idx.size == 0:
            raise ValidationError(f"object {obj} has no points")
        pts = np.asarray(positions, dtype=np.float64)[idx]
        layers = []
        chain = np.arange(idx.size)
        cur = pts
        for li in range(cfg.n_layers):
            s = min(cfg.n_samples[li], cur.shape[0])
            centers = geometry.farthest_point_sample(cur, s)
            nb = geometry.ball_query(centers, cur, cfg.radii[li], cfg.max_neighbors[li])
            layers.append(LayerPlan(centers=centers, neighbors=nb.indices))
            chain = chain[centers]
            cur = cur[centers]
        objects.append(ObjectPlan(point_indices=idx, layers=layers, source_local=chain))
    return GroupingPlan(objects=objects)


@dataclass
class LatentState:
    """Control points: positions, orientations, context vectors, plus the
    fixed map back into the mass cloud."""

    positions: torch.Tensor       # (M, 2)
    orientations: torch.Tensor    # (M,)
    contexts: torch.Tensor        # (M, C)
    source_indices: torch.Tensor  # (M,) long, global indices into the cloud
    object_ids: torch.Tensor      # (M,) long

    @property
    def n_latents(self) -> int:
        return self.positions.shape[0]

    def detach(self) -> "LatentState":
        return LatentState(
            self.positions.detach(), self.orientations.detach(),
            self.contexts.detach(), self.source_indices, self.object_ids,
        )

    def transformed(self, g: geometry.GroupElement) -> "LatentState":
        """Group action on the latent: poses move, contexts are untouched."""
        pos, theta = g.act_on_poses(
            self.positions.detach().cpu().numpy().astype(np.float64),
            self.orientations.detach().cpu().numpy().astype(np.float64),
        )
        return LatentState(
            torch.as_tensor(pos, dtype=self.positions.dtype),
            torch.as_tensor(theta, dtype=self.orientations.dtype),
            self.contexts.clone(),
            self.source_indices,
            self.object_ids,
        )


def _gather_points(x: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
    """x: (B, N, D); idx: (B, S) -> (B, S, D)."""
    d = x.shape[-1]
    return torch.gather(x, 1, idx.unsqueeze(-1).expand(*idx.shape, d))


def _gather_groups(x: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
    """x: (B, N, D); idx: (B, S, K) -> (B, S, K, D)."""
    b, s, k = idx.shape
    flat = _gather_points(x, idx.reshape(b, s * k))
    return flat.reshape(b, s, k, x.shape[-1])


def _angle_between_t(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    na2 = (a * a).sum(-1)
    nb2 = (b * b).sum(-1)
    cross = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    dot = (a * b).sum(-1)
    ang = torch.atan2(cross.abs(), dot)
    return torch.where((na2 > 0) & (nb2 > 0), ang, torch.zeros_like(ang))


def rotation_invariants_torch(c_pos, c_vel, n_pos, n_vel) -> torch.Tensor:
    """Batched version of geometry.rotation_invariants; (..., 5) output
    ordered [theta1, theta2, ||rel||^2, ||dv||^2, cos(rel, dv)]."""
    rel = c_pos - n_pos
    dv = c_vel - n_vel
    d2 = (rel * rel).sum(-1)
    dv2 = (dv * dv).sum(-1)
    th1 = _angle_between_t(c_vel, rel)
    th2 = _angle_between_t(n_vel, rel)
    num = (rel * dv).sum(-1)
    den2 = d2 * dv2
    cos = torch.where(
        den2 > 0, num / torch.sqrt(den2.clamp_min(1e-300)), torch.zeros_like(num)
    )
    return torch.stack([th1, th2, d2, dv2, cos], dim=-1)


class PointCloudEncoder(nn.Module):
    """Stacked set-abstraction layers applied independently per object."""

    def __init__(self, cfg: EncoderConfig, variant: str):
        super().__init__()
        if variant not in GROUP_VARIANTS:
            raise ValidationError(f"unknown group variant {variant!r}")
        self.cfg = cfg
        self.variant = variant
        attr_dim = 4 if variant == "translation" else 7
        self.mlps = nn.ModuleList()
        in_dim = attr_dim  # first layer has no prior features
        for li, dims in enumerate(cfg.mlp_dims):
            layers = []
            d = in_dim
            for out in dims:
                layers += [nn.Linear(d, out), nn.ReLU()]
                d = out
            self.mlps.append(nn.Sequential(*layers))
            in_dim = attr_dim + dims[-1]

    def _attributes(self, c_pos, c_vel, n_pos, n_vel) -> torch.Tensor:
        if self.variant == "translation":
            return torch.cat([c_pos - n_pos, c_vel - n_vel], dim=-1)
        inv = rotation_invariants_torch(c_pos, c_vel, n_pos, n_vel)
        th1, th2 = inv[..., 0], inv[..., 1]
        return torch.stack(
            [torch.sin(th1), torch.cos(th1), torch.sin(th2), torch.cos(th2),
             inv[..., 2], inv[..., 3], inv[..., 4]],
            dim=-1,
        )

    def abstraction_layer(self, li: int, pos, vel, feats, centers, neighbors):
        """One set-abstraction layer.

        pos/vel: (B, n, 2); feats: (B, n, F) or None; centers: (B, S);
        neighbors: (B, S, K). Returns (sub_pos, sub_vel, sub_feats).
        """
        c_pos = _gather_points(pos, centers)
        c_vel = _gather_points(vel, centers)
        n_pos = _gather_groups(pos, neighbors)
        n_vel = _gather_groups(vel, neighbors)
        attrs = self._attributes(
            c_pos.unsqueeze(2), c_vel.unsqueeze(2), n_pos, n_vel
        )
        if feats is not None:
            attrs = torch.cat([attrs, _gather_groups(feats, neighbors)], dim=-1)
        h = self.mlps[li](attrs)
        return c_pos, c_vel, h.max(dim=2).values

    def forward_object(self, pos, vel, centers_per_layer, neighbors_per_layer):
        """Run all layers for one object. pos/vel: (B, n_obj, 2)."""
        feats = None
        for li in range(self.cfg.n_layers):
            pos, vel, feats = self.abstraction_layer(
                li, pos, vel, feats, centers_per_layer[li], neighbors_per_layer[li]
            )
        return pos, vel, feats

    def forward_batched(self, positions, velocities, plans):
        """Encode a batch of frames sharing one object layout.

        positions/velocities: (B, N, 2) tensors; plans: list of B
        GroupingPlans (same per-object sizes). Returns
        (ctl_pos, ctl_theta, ctl_ctx, source_indices) with leading batch dim.
        """
        b = positions.shape[0]
        device = positions.device
        n_objects = len(plans[0].objects)
        outs_pos, outs_vel, outs_ctx, outs_src = [], [], [], []
        for obj in range(n_objects):
            pt_idx = torch.as_tensor(
                np.stack([p.objects[obj].point_indices for p in plans]),
                dtype=torch.long, device=device,
            )
            pos = _gather_points(positions, pt_idx)
            vel = _gather_points(velocities, pt_idx)
            centers = [
                torch.as_tensor(
                    np.stack([p.objects[obj].layers[li].centers for p in plans]),
                    dtype=torch.long, device=device)
                for li in range(self.cfg.n_layers)
            ]
            neighbors = [
                torch.as_tensor(
                    np.stack([p.objects[obj].layers[li].neighbors for p in plans]),
                    dtype=torch.long, device=device)
                for li in range(self.cfg.n_layers)
            ]
            cp, cv, cf = self.forward_object(pos, vel, centers, neighbors)
            outs_pos.append(cp)
            outs_vel.append(cv)
            outs_ctx.append(cf)
            outs_src.append(torch.as_tensor(
                np.stack([p.objects[obj].source_global for p in plans]),
                dtype=torch.long, device=device))
        ctl_pos = torch.cat(outs_pos, dim=1)
        ctl_vel = torch.cat(outs_vel, dim=1)
        ctl_ctx = torch.cat(outs_ctx, dim=1)
        src = torch.cat(outs_src, dim=1)
        speed = ctl_vel.norm(dim=-1)
        theta = torch.where(
            speed >= ZERO_SPEED,
            torch.atan2(ctl_vel[..., 1], ctl_vel[..., 0]),
            torch.zeros_like(speed),
        )
        return ctl_pos, theta, ctl_ctx, src

    def encode(self, cloud: MassPointCloud, plan: GroupingPlan | None = None) -> LatentState:
        """Encode one cloud into a LatentState (M = per-object count x
        n_objects; contexts invariant, poses equivariant under the
        configured group)."""
        if plan is None:
            plan = plan_grouping(cloud.positions, cloud.object_ids, self.cfg)
        dtype = next(self.parameters()).dtype
        pos = torch.as_tensor(cloud.positions, dtype=dtype).unsqueeze(0)
        vel = torch.as_tensor(cloud.velocities, dtype=dtype).unsqueeze(0)
        ctl_pos, theta, ctx, src = self.forward_batched(pos, vel, [plan])
        return LatentState(
            positions=ctl_pos[0],
            orientations=geometry_wrap_torch(theta[0]),
            contexts=ctx[0],
            source_indices=src[0],
            object_ids=torch.as_tensor(plan.latent_object_ids, dtype=torch.long),
        )


def geometry_wrap_torch(theta: torch.Tensor) -> torch.Tensor:
    """Wrap angles to (-pi, pi] (torch twin of geometry.wrap_angle)."""
    pi = torch.pi
    return pi - torch.remainder(pi - theta, 2 * pi)
