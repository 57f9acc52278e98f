"""Differentiable pairwise pose attributes shared by the decoder and the
processor.

"se2" attributes are invariant under simultaneous rotation+translation of
both poses; "translation" attributes are invariant under translations only.
Angle-valued components are embedded as (sin, cos) so downstream polynomial
or random-feature maps see no 2*pi discontinuity. The non-equivariant
ablation replaces the invariant construction with raw endpoint sums.
"""

from __future__ import annotations

import torch


def rotate(theta: torch.Tensor, vec: torch.Tensor) -> torch.Tensor:
    """Rotate (..., 2) vectors by (...,) angles."""
    c, s = torch.cos(theta), torch.sin(theta)
    x = c * vec[..., 0] - s * vec[..., 1]
    y = s * vec[..., 0] + c * vec[..., 1]
    return torch.stack([x, y], dim=-1)


def pair_attribute_dim(variant: str, non_equivariant: bool) -> int:
    if non_equivariant:
        return 3
    return 4 if variant == "se2" else 6


def pair_attributes(pos_i, theta_i, pos_j, theta_j, variant: str,
                    non_equivariant: bool = False) -> torch.Tensor:
    """Attribute of pose pair (i, j) from i's perspective.

    se2: [R(-th_i)(x_j - x_i), sin(th_j - th_i), cos(th_j - th_i)]
    translation: [x_j - x_i, sin th_i, cos th_i, sin th_j, cos th_j]
    non_equivariant (ablation): [x_i + x_j, th_i + th_j]
    """
    if non_equivariant:
        return torch.cat([pos_i + pos_j, (theta_i + theta_j).unsqueeze(-1)], dim=-1)
    rel = pos_j - pos_i
    lead = rel.shape[:-1]
    if variant == "se2":
        rel = rotate(-theta_i, rel)
        dth = (theta_j - theta_i).expand(lead)
        return torch.cat(
            [rel, torch.sin(dth).unsqueeze(-1), torch.cos(dth).unsqueeze(-1)], dim=-1
        )
    ti = theta_i.expand(lead)
    tj = theta_j.expand(lead)
    return torch.cat(
        [
            rel,
            torch.sin(ti).unsqueeze(-1), torch.cos(ti).unsqueeze(-1),
            torch.sin(tj).unsqueeze(-1), torch.cos(tj).unsqueeze(-1),
        ],
        dim=-1,
    )


def query_attribute_dim(non_equivariant: bool) -> int:
    return 3 if non_equivariant else 2


def query_attributes(query_pos, lat_pos, lat_theta, variant: str,
                     non_equivariant: bool = False) -> torch.Tensor:
    """Attribute of a (query point, latent pose) pair.

    se2: relative position expressed in the latent frame;
    translation: plain relative position;
    non_equivariant (ablation): [x_q + x_ctl, th_ctl].
    """
    if non_equivariant:
        return torch.cat([query_pos + lat_pos, lat_theta.unsqueeze(-1)], dim=-1)
    rel = query_pos - lat_pos
    if variant == "se2":
        rel = rotate(-lat_theta, rel)
    return rel
