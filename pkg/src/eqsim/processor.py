"""Collision-aware graph construction over control points, and the
message-passing network producing time derivatives of control-point
orientations and contexts.

Graph recipe: complete directed graphs within each object's control points
("inner" edges); a directed "inter" edge i->j between control points of
different objects exists iff some mass-point pair (a, b) of the two objects
lies closer than d_col, with a within r_ctl of control point i and b within
r_ctl of control point j (localization modes configurable). The edge set
depends only on pairwise distances, so it is exactly invariant under rigid
motions; mass pairs come from a uniform spatial hash at cell size d_col and
match a brute-force scan exactly.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .attributes import pair_attribute_dim, pair_attributes
from .errors import ConfigurationError, ValidationError
from .spatialhash import pairs_within
from .state import MassPointCloud

INNER, INTER = 0, 1
PREDICATE_MODES = ("both", "either", "midpoint")


@dataclass
class ProcessorConfig:
    hidden_dim: int = 64
    n_layers: int = 3
    widening: int = 2
    poly_degree: int = 3
    basis_dim: int = 64
    d_col: float = 0.05
    r_ctl: float = 0.05
    predicate_mode: str = "both"

    def __post_init__(self):
        if self.d_col <= 0 or self.r_ctl <= 0:
            raise ValidationError("collision thresholds must be positive")
        if self.predicate_mode not in PREDICATE_MODES:
            raise ValidationError(
                f"unknown predicate_mode {self.predicate_mode!r}; "
                f"known: {PREDICATE_MODES}"
            )
        if self.poly_degree < 1:
            raise ValidationError("poly_degree must be >= 1")


@dataclass
class CollisionGraph:
    """Directed labeled edges over control points."""

    senders: np.ndarray
    receivers: np.ndarray
    labels: np.ndarray  # INNER or INTER
    n_nodes: int
    d_col: float
    r_ctl: float

    @property
    def n_edges(self) -> int:
        return self.senders.shape[0]

    def edge_set(self) -> set:
        return set(zip(self.senders.tolist(), self.receivers.tolist(),
                       self.labels.tolist()))


def build_collision_graph(cloud: MassPointCloud, z, cfg: ProcessorConfig,
                          include_inter: bool = True) -> CollisionGraph:
    """Construct the per-step interaction graph.

    ``z`` is a LatentState; control positions are re-read from the cloud at
    z.source_indices (the hard-constraint coupling), so graph geometry always
    matches the mass points. ``include_inter=False`` implements the static
    adjacency ablation.
    """
    src = np.asarray(z.source_indices, dtype=np.int64).reshape(-1)
    ctl_obj = np.asarray(z.object_ids, dtype=np.int64).reshape(-1)
    if src.max(initial=-1) >= cloud.n_points:
        raise ValidationError("latent source indices out of cloud range")
    if not np.array_equal(cloud.object_ids[src], ctl_obj):
        raise ValidationError("latent object ids inconsistent with the cloud")
    m = src.shape[0]
    pts = cloud.positions.astype(np.float64)
    ctl_pos = pts[src]

    senders, receivers, labels = [], [], []
    for obj in np.unique(ctl_obj):
        nodes = np.flatnonzero(ctl_obj == obj)
        for i, j in itertools.permutations(nodes.tolist(), 2):
            senders.append(i)
            receivers.append(j)
            labels.append(INNER)

    if include_inter and int(ctl_obj.max()) > 0:
        obj_ids = cloud.object_ids
        ctl_by_obj = {
            int(o): np.flatnonzero(ctl_obj == o) for o in np.unique(ctl_obj)
        }
        a_idx, b_idx = pairs_within(pts, cfg.d_col, ids=obj_ids)
        inter = set()
        r2 = cfg.r_ctl**2
        for a, b in zip(a_idx.tolist(), b_idx.tolist()):
            for p, q in ((a, b), (b, a)):
                ctl_p = ctl_by_obj[int(obj_ids[p])]
                ctl_q = ctl_by_obj[int(obj_ids[q])]
                dp = ((ctl_pos[ctl_p] - pts[p]) ** 2).sum(axis=1)
                dq = ((ctl_pos[ctl_q] - pts[q]) ** 2).sum(axis=1)
                if cfg.predicate_mode == "both":
                    near_p, near_q = ctl_p[dp < r2], ctl_q[dq < r2]
                    inter.update(
                        (int(i), int(j)) for i in near_p for j in near_q
                    )
                elif cfg.predicate_mode == "either":
                    near_p, near_q = ctl_p[dp < r2], ctl_q[dq < r2]
                    inter.update((int(i), int(j)) for i in near_p for j in ctl_q)
                    inter.update((int(i), int(j)) for i in ctl_p for j in near_q)
                else:  # midpoint
                    mid = 0.5 * (pts[p] + pts[q])
                    dmp = ((ctl_pos[ctl_p] - mid) ** 2).sum(axis=1)
                    dmq = ((ctl_pos[ctl_q] - mid) ** 2).sum(axis=1)
                    inter.update(
                        (int(i), int(j))
                        for i in ctl_p[dmp < r2] for j in ctl_q[dmq < r2]
                    )
        for i, j in sorted(inter):
            senders.append(i)
            receivers.append(j)
            labels.append(INTER)

    return CollisionGraph(
        senders=np.asarray(senders, dtype=np.int64),
        receivers=np.asarray(receivers, dtype=np.int64),
        labels=np.asarray(labels, dtype=np.int64),
        n_nodes=m,
        d_col=cfg.d_col,
        r_ctl=cfg.r_ctl,
    )


def merge_graphs(graphs: list, nodes_per_graph: int):
    """Concatenate per-sample graphs into one flat edge list with node
    offsets (for batched processing)."""
    senders, receivers, labels = [], [], []
    for k, g in enumerate(graphs):
        off = k * nodes_per_graph
        senders.append(g.senders + off)
        receivers.append(g.receivers + off)
        labels.append(g.labels)
    return (
        np.concatenate(senders) if senders else np.empty(0, np.int64),
        np.concatenate(receivers) if receivers else np.empty(0, np.int64),
        np.concatenate(labels) if labels else np.empty(0, np.int64),
    )


def _monomial_indices(n_vars: int, degree: int):
    groups = []
    for d in range(1, degree + 1):
        groups.append(list(itertools.combinations_with_replacement(range(n_vars), d)))
    return groups


class PolynomialBasis(nn.Module):
    """All monomials of the attribute scalars up to ``degree``, mapped by a
    linear layer into a fixed-size basis."""

    def __init__(self, n_vars: int, degree: int, basis_dim: int):
        super().__init__()
        self.groups = _monomial_indices(n_vars, degree)
        n_mono = sum(len(g) for g in self.groups)
        self.proj = nn.Linear(n_mono, basis_dim)

    def forward(self, a: torch.Tensor) -> torch.Tensor:
        feats = []
        for group in self.groups:
            idx = torch.as_tensor(group, device=a.device)
            term = a[..., idx[:, 0]]
            for c in range(1, idx.shape[1]):
                term = term * a[..., idx[:, c]]
            feats.append(term)
        return self.proj(torch.cat(feats, dim=-1))


class EdgeKernel(nn.Module):
    """Kernel generator for one edge label: polynomial basis -> MLP ->
    channel-wise modulation vector."""

    def __init__(self, attr_dim: int, cfg: ProcessorConfig):
        super().__init__()
        self.basis = PolynomialBasis(attr_dim, cfg.poly_degree, cfg.basis_dim)
        self.mlp = nn.Sequential(
            nn.GELU(), nn.Linear(cfg.basis_dim, cfg.hidden_dim)
        )

    def forward(self, attrs: torch.Tensor) -> torch.Tensor:
        return self.mlp(self.basis(attrs))


class LatentDynamics(nn.Module):
    """Message-passing network emitting (d theta / dt, d context / dt).

    Node inputs are invariant under the configured group: contexts always;
    the (sin, cos) of the absolute orientation only in the translation
    variant (absolute orientation is not rotation-invariant, so the se2
    variant receives orientation information exclusively through relative
    pair attributes).
    """

    def __init__(self, cfg: ProcessorConfig, context_dim: int, variant: str,
                 non_equivariant: bool = False, zero_init_head: bool = True):
        super().__init__()
        self.cfg = cfg
        self.variant = variant
        self.non_equivariant = non_equivariant
        self.context_dim = context_dim
        in_dim = context_dim + (2 if variant == "translation" else 0)
        h = cfg.hidden_dim
        self.embed = nn.Linear(in_dim, h)
        attr_dim = pair_attribute_dim(variant, non_equivariant)
        self.inner_kernels = nn.ModuleList(
            EdgeKernel(attr_dim, cfg) for _ in range(cfg.n_layers)
        )
        self.inter_kernels = nn.ModuleList(
            EdgeKernel(attr_dim, cfg) for _ in range(cfg.n_layers)
        )
        self.mixers = nn.ModuleList(
            nn.Sequential(
                nn.Linear(h, h * cfg.widening), nn.GELU(),
                nn.Linear(h * cfg.widening, h),
            )
            for _ in range(cfg.n_layers)
        )
        self.readout = nn.Linear(h, 1 + context_dim)
        if zero_init_head:
            nn.init.zeros_(self.readout.weight)
            nn.init.zeros_(self.readout.bias)

    def forward(self, lat_pos, lat_theta, lat_ctx, senders, receivers, labels):
        """Flat node tensors: lat_pos (M, 2), lat_theta (M,), lat_ctx (M, C);
        edge arrays are index tensors into the nodes. Returns
        (dtheta (M,), dctx (M, C))."""
        m = lat_pos.shape[0]
        if lat_ctx.shape != (m, self.context_dim):
            raise ValidationError(
                f"contexts must have shape ({m}, {self.context_dim})"
            )
        feats = lat_ctx
        if self.variant == "translation":
            feats = torch.cat(
                [feats, torch.sin(lat_theta).unsqueeze(-1),
                 torch.cos(lat_theta).unsqueeze(-1)], dim=-1
            )
        h = self.embed(feats)

        has_edges = senders.numel() > 0
        if has_edges:
            for lb in torch.unique(labels).tolist():
                if lb not in (INNER, INTER):
                    raise ConfigurationError(
                        f"edge label {lb} has no registered kernel"
                    )
            attrs = pair_attributes(
                lat_pos[receivers], lat_theta[receivers],
                lat_pos[senders], lat_theta[senders],
                self.variant, self.non_equivariant,
            )
            groups = []
            for lb, kernels in ((INNER, self.inner_kernels),
                                (INTER, self.inter_kernels)):
                idx = (labels == lb).nonzero(as_tuple=True)[0]
                if idx.numel():
                    groups.append((idx, kernels))
        for li in range(self.cfg.n_layers):
            agg = torch.zeros_like(h)
            if has_edges:
                for idx, kernels in groups:
                    msg = kernels[li](attrs[idx]) * h[senders[idx]]
                    agg = agg.index_add(0, receivers[idx], msg)
            h = h + self.mixers[li](agg)
        out = self.readout(h)
        return out[:, 0], out[:, 1:]
