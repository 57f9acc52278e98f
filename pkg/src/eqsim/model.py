"""The assembled encode-process-decode simulator and its one-step state
update.

Step semantics (explicit Euler, dt in seconds):
    v          = decode(cloud.positions; z)
    positions' = positions + v * dt          (all mass points)
    graph      = collision graph of the pre-step cloud
    (dth, dc)  = latent_derivative(z, graph)
    theta'     = wrap(theta + dth * dt)
    context'   = context + dc * dt
    control positions' = positions'[source_indices]   (hard constraint:
                 re-read from the advanced mass points, never integrated
                 as independent variables)

source_indices are fixed for an entire rollout.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch
from torch import nn

from .decoder import DecoderConfig, FieldDecoder
from .encoder import (
    GROUP_VARIANTS,
    EncoderConfig,
    GroupingPlan,
    LatentState,
    PointCloudEncoder,
    geometry_wrap_torch,
)
from .errors import NumericalError, ValidationError
from .processor import (
    CollisionGraph,
    LatentDynamics,
    ProcessorConfig,
    build_collision_graph,
    merge_graphs,
)
from .state import MassPointCloud


@dataclass
class ModelConfig:
    group_variant: str = "translation"
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    processor: ProcessorConfig = field(default_factory=ProcessorConfig)
    non_equivariant_attr: bool = False
    static_adjacency: bool = False
    zero_init_heads: bool = True

    def __post_init__(self):
        if self.group_variant not in GROUP_VARIANTS:
            raise ValidationError(
                f"group_variant must be one of {GROUP_VARIANTS}, "
                f"got {self.group_variant!r}"
            )
        if self.decoder.context_dim != self.encoder.context_dim:
            raise ValidationError(
                f"decoder context_dim {self.decoder.context_dim} != encoder "
                f"context width {self.encoder.context_dim}"
            )


class NeuralSimulator(nn.Module):
    """Encoder + collision-aware latent dynamics + neural velocity field."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = PointCloudEncoder(cfg.encoder, cfg.group_variant)
        self.decoder = FieldDecoder(
            cfg.decoder, cfg.group_variant,
            non_equivariant=cfg.non_equivariant_attr,
            zero_init_head=cfg.zero_init_heads,
        )
        self.dynamics = LatentDynamics(
            cfg.processor, cfg.encoder.context_dim, cfg.group_variant,
            non_equivariant=cfg.non_equivariant_attr,
            zero_init_head=cfg.zero_init_heads,
        )

    # -- public single-sample surface --------------------------------------

    @property
    def dtype(self):
        return next(self.parameters()).dtype

    def encode(self, cloud: MassPointCloud, plan: GroupingPlan | None = None) -> LatentState:
        return self.encoder.encode(cloud, plan)

    def decode(self, queries, z: LatentState) -> torch.Tensor:
        """Evaluate the velocity field at (Q, 2) query positions."""
        q = torch.as_tensor(np.asarray(queries), dtype=self.dtype)
        if q.ndim != 2 or q.shape[-1] != 2:
            raise ValidationError("queries must have shape (Q, 2)")
        if q.shape[0] < 1:
            raise ValidationError("need at least one query")
        out = self.decoder(
            q.unsqueeze(0),
            z.positions.unsqueeze(0),
            z.orientations.unsqueeze(0),
            z.contexts.unsqueeze(0),
        )
        return out[0]

    def derivative(self, z: LatentState, graph: CollisionGraph):
        """(d theta / dt, d context / dt) for one latent state."""
        dth, dc = self.dynamics(
            z.positions, z.orientations, z.contexts,
            torch.as_tensor(graph.senders, dtype=torch.long),
            torch.as_tensor(graph.receivers, dtype=torch.long),
            torch.as_tensor(graph.labels, dtype=torch.long),
        )
        return dth, dc

    def build_graph(self, cloud: MassPointCloud, z: LatentState) -> CollisionGraph:
        return build_collision_graph(
            cloud, z, self.cfg.processor,
            include_inter=not self.cfg.static_adjacency,
        )

    def step(self, z: LatentState, cloud: MassPointCloud, dt: float):
        """One Euler step; returns (z', cloud'). dt == 0 returns the inputs
        unchanged."""
        if dt < 0:
            raise ValidationError("dt must be >= 0")
        if dt == 0:
            return z, cloud
        pos = torch.as_tensor(cloud.positions, dtype=self.dtype).unsqueeze(0)
        zb = BatchedLatent.from_states([z])
        graphs = [self.build_graph(cloud, z)]
        new_pos, vel, zb2 = step_tensors(self, pos, zb, graphs, dt, cloud.object_ids)
        if not torch.isfinite(new_pos).all():
            raise NumericalError("non-finite positions after step")
        new_cloud = MassPointCloud(
            new_pos[0].detach().cpu().numpy().astype(np.float32),
            vel[0].detach().cpu().numpy().astype(np.float32),
            cloud.object_ids.copy(),
        )
        return zb2.to_states()[0], new_cloud


@dataclass
class BatchedLatent:
    """Stacked latent tensors for a batch sharing one object layout."""

    positions: torch.Tensor       # (B, M, 2)
    orientations: torch.Tensor    # (B, M)
    contexts: torch.Tensor        # (B, M, C)
    source_indices: torch.Tensor  # (B, M) long
    object_ids: torch.Tensor      # (M,) long, shared

    @classmethod
    def from_states(cls, states: list) -> "BatchedLatent":
        return cls(
            torch.stack([s.positions for s in states]),
            torch.stack([s.orientations for s in states]),
            torch.stack([s.contexts for s in states]),
            torch.stack([s.source_indices for s in states]),
            states[0].object_ids,
        )

    def to_states(self) -> list:
        return [
            LatentState(
                self.positions[b], self.orientations[b], self.contexts[b],
                self.source_indices[b], self.object_ids,
            )
            for b in range(self.positions.shape[0])
        ]

    def state_view(self, b: int) -> LatentState:
        return LatentState(
            self.positions[b], self.orientations[b], self.contexts[b],
            self.source_indices[b], self.object_ids,
        )

    @property
    def batch(self) -> int:
        return self.positions.shape[0]

    @property
    def n_latents(self) -> int:
        return self.positions.shape[1]


def batched_graphs(model: NeuralSimulator, positions: torch.Tensor,
                   zb: BatchedLatent, object_ids: np.ndarray) -> list:
    """Collision graphs for each batch item, from detached positions."""
    pos_np = positions.detach().cpu().numpy().astype(np.float32)
    graphs = []
    for b in range(positions.shape[0]):
        cloud = MassPointCloud(pos_np[b], np.zeros_like(pos_np[b]), object_ids)
        graphs.append(model.build_graph(cloud, zb.state_view(b).detach()))
    return graphs


def step_tensors(model: NeuralSimulator, positions: torch.Tensor,
                 zb: BatchedLatent, graphs: list, dt: float,
                 object_ids: np.ndarray):
    """Differentiable batched Euler step.

    positions: (B, N, 2). Returns (new_positions, velocities, new latent).
    ``graphs`` must be built from the pre-step state.
    """
    b, n, _ = positions.shape
    m = zb.n_latents
    vel = model.decoder(positions, zb.positions, zb.orientations, zb.contexts)
    new_pos = positions + vel * dt

    senders, receivers, labels = merge_graphs(graphs, m)
    dth, dc = model.dynamics(
        zb.positions.reshape(b * m, 2),
        zb.orientations.reshape(b * m),
        zb.contexts.reshape(b * m, -1),
        torch.as_tensor(senders, dtype=torch.long, device=positions.device),
        torch.as_tensor(receivers, dtype=torch.long, device=positions.device),
        torch.as_tensor(labels, dtype=torch.long, device=positions.device),
    )
    new_theta = geometry_wrap_torch(zb.orientations + dth.reshape(b, m) * dt)
    new_ctx = zb.contexts + dc.reshape(b, m, -1) * dt
    ctl_pos = torch.gather(
        new_pos, 1, zb.source_indices.unsqueeze(-1).expand(b, m, 2)
    )
    return new_pos, vel, BatchedLatent(
        ctl_pos, new_theta, new_ctx, zb.source_indices, zb.object_ids
    )


def make_model(cfg: ModelConfig, seed: int = 0) -> NeuralSimulator:
    """Build a simulator with seeded parameter initialization."""
    torch.manual_seed(seed)
    return NeuralSimulator(cfg)


def micro_model_config(variant: str = "se2", **overrides) -> ModelConfig:
    """A tiny configuration for gradient checks: hidden 8, 4 control points
    per object, suitable for 64-point objects and float64 runs."""
    enc = EncoderConfig(
        mlp_dims=[[8, 8], [8, 8]],
        n_samples=[16, 4],
        radii=[0.08, 0.2],
        max_neighbors=[8, 8],
    )
    dec = DecoderConfig(n_heads=2, hidden_dim=8, context_dim=8)
    proc = ProcessorConfig(hidden_dim=8, basis_dim=8)
    base = dict(
        group_variant=variant, encoder=enc, decoder=dec, processor=proc,
        zero_init_heads=False,
    )
    base.update(overrides)
    return ModelConfig(**base)
