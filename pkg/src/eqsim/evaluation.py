"""Rollout inference, position-MSE reporting at a fixed step schedule, the
two-pipeline equivariance verifier, and ablation switches.

The k-step MSE is measured at exactly step k (not averaged over steps up to
k); see RolloutReport. Equivariance deviation between two arrays a, b is
||a - b|| / (||a|| + ||b|| + 1e-12) with Frobenius norms.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import NumericalError, ValidationError
from .geometry import GroupElement
from .model import ModelConfig, NeuralSimulator
from .state import MassPointCloud, Trajectory

DEFAULT_SCHEDULE = (1, 5, 10, 15, 20, 25)
DIVERGENCE_LO, DIVERGENCE_HI = -1.0, 2.0
EPS = 1e-12


@dataclass
class RolloutReport:
    """Per-sample, per-horizon position MSE plus aggregates."""

    schedule: list
    rows: list = field(default_factory=list)   # (split, sample_id, step, mse)
    metadata: dict = field(default_factory=dict)

    def add(self, split: str, sample_id: str, mses: dict):
        for step in self.schedule:
            self.rows.append((split, sample_id, step, mses[step]))

    def means(self) -> dict:
        out = {}
        for step in self.schedule:
            vals = [r[3] for r in self.rows if r[2] == step]
            out[step] = float(np.mean(vals)) if vals else float("nan")
        return out


def rollout(model: NeuralSimulator, frame0: MassPointCloud, n_steps: int,
            dt: float) -> Trajectory:
    """Encode once at frame 0, then step n_steps times.

    Frame 0 of the result equals the input; frame t >= 1 stores the
    positions after step t and the velocity field that produced them.
    Aborts with the step index if any position leaves [-1, 2]^2.
    """
    if n_steps < 1:
        raise ValidationError("n_steps must be >= 1")
    frames = [frame0.copy()]
    with torch.no_grad():
        z = model.encode(frame0)
        cloud = frame0
        for step in range(1, n_steps + 1):
            z, cloud = model.step(z, cloud, dt)
            p = cloud.positions
            if (p.min() < DIVERGENCE_LO) or (p.max() > DIVERGENCE_HI):
                raise NumericalError(
                    f"rollout diverged at step {step}: positions left "
                    f"[{DIVERGENCE_LO}, {DIVERGENCE_HI}]^2"
                )
            frames.append(cloud.copy())
    return Trajectory(frames=frames, dt=dt,
                      provenance={"generator": "rollout", "n_steps": n_steps})


def rollout_mse(pred: Trajectory, gt: Trajectory, schedule) -> dict:
    """Position MSE at each scheduled step: mean over points of the squared
    error norm at exactly that step."""
    if pred.n_points != gt.n_points:
        raise ValidationError("prediction/ground-truth point counts differ")
    if abs(pred.dt - gt.dt) > 1e-12:
        raise ValidationError("prediction/ground-truth dt differ")
    out = {}
    for step in schedule:
        if step < 0 or step >= pred.n_frames or step >= gt.n_frames:
            raise ValidationError(
                f"schedule step {step} exceeds trajectory length "
                f"({pred.n_frames} predicted / {gt.n_frames} ground-truth frames)"
            )
        d = pred.frames[step].positions.astype(np.float64) - \
            gt.frames[step].positions.astype(np.float64)
        out[step] = float((d**2).sum(axis=1).mean())
    return out


def evaluate_dataset(model: NeuralSimulator, trajectories: list, schedule=None,
                     split: str = "test", metadata: dict | None = None) -> RolloutReport:
    """One rollout per trajectory from its first frame, horizons up to
    max(schedule)."""
    schedule = list(schedule if schedule is not None else DEFAULT_SCHEDULE)
    if sorted(schedule) != schedule:
        raise ValidationError("schedule must be sorted ascending")
    if not trajectories:
        raise ValidationError("empty evaluation split")
    report = RolloutReport(schedule=schedule, metadata=dict(metadata or {}))
    horizon = max(schedule)
    for k, gt in enumerate(trajectories):
        pred = rollout(model, gt.frames[0], horizon, gt.dt)
        report.add(split, f"{k:04d}", rollout_mse(pred, gt, schedule))
    return report


def write_report_csv(report: RolloutReport, path):
    lines = ["split,sample_id,step,mse"]
    for split, sid, step, mse in report.rows:
        lines.append(f"{split},{sid},{step},{mse:.10e}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_summary_csv(report: RolloutReport, path):
    means = report.means()
    header = ",".join(f"{s}-step" for s in report.schedule)
    values = ",".join(f"{means[s]:.10e}" for s in report.schedule)
    Path(path).write_text(header + "\n" + values + "\n")


def relative_deviation(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / (np.linalg.norm(a) + np.linalg.norm(b) + EPS))


def transform_cloud(cloud: MassPointCloud, g: GroupElement) -> MassPointCloud:
    """Group action on a system state: positions move, velocities rotate."""
    return MassPointCloud(
        g.act_on_points(cloud.positions).astype(np.float32),
        g.act_on_vectors(cloud.velocities).astype(np.float32),
        cloud.object_ids.copy(),
    )


def verify_equivariance(model: NeuralSimulator, sample: MassPointCloud,
                        group_elements: list, n_steps: int, dt: float) -> list:
    """Two-pipeline check: (transform then simulate) vs (simulate then
    transform). Returns the max relative position deviation over frames for
    each group element."""
    for g in group_elements:
        if model.cfg.group_variant == "translation" and g.rotation_angle != 0.0:
            raise ValidationError(
                "rotation requested on a translation-only model"
            )
    base = rollout(model, sample, n_steps, dt)
    out = []
    for g in group_elements:
        transformed = rollout(model, transform_cloud(sample, g), n_steps, dt)
        dev = 0.0
        for f_t, f_b in zip(transformed.frames, base.frames):
            ref = g.act_on_points(f_b.positions)
            dev = max(dev, relative_deviation(f_t.positions, ref))
        out.append(dev)
    return out


def ablation_configure(model_cfg: ModelConfig, which: str | None = None) -> ModelConfig:
    """Return a copy of the config with one ablation switch set.

    "non_equivariant_attr" replaces every pairwise invariant attribute in
    the processor and decoder with raw endpoint sums; "static_adjacency"
    disables collision detection (same-object edges only). ``None`` returns
    an unchanged copy.
    """
    if which is None:
        return dataclasses.replace(model_cfg)
    if which == "non_equivariant_attr":
        return dataclasses.replace(model_cfg, non_equivariant_attr=True)
    if which == "static_adjacency":
        return dataclasses.replace(model_cfg, static_adjacency=True)
    raise ValidationError(
        f"unknown ablation flag {which!r}; "
        "known: non_equivariant_attr, static_adjacency"
    )


def long_horizon_means(model: NeuralSimulator, trajectories: list,
                       horizons) -> dict:
    """Mean position MSE per horizon over all samples (long-rollout harness)."""
    horizons = sorted(horizons)
    acc = {h: [] for h in horizons}
    for gt in trajectories:
        pred = rollout(model, gt.frames[0], max(horizons), gt.dt)
        for h, v in rollout_mse(pred, gt, horizons).items():
            acc[h].append(v)
    return {h: float(np.mean(v)) for h, v in acc.items()}
