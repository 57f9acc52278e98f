"""Figure emission: scatter frame grids for trajectories and MSE-vs-step
curves from report CSVs."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import ValidationError  # noqa: E402
from .state import Trajectory  # noqa: E402

FRAME_GRID_STEPS = (5, 10, 15, 20, 25, 30)


def plot_trajectory_grid(traj: Trajectory, out_path, steps=FRAME_GRID_STEPS):
    """One scatter panel per requested rollout step, colored by object."""
    steps = [s for s in steps if s < traj.n_frames]
    if not steps:
        raise ValidationError("no requested step lies inside the trajectory")
    fig, axes = plt.subplots(1, len(steps), figsize=(2.2 * len(steps), 2.4))
    if len(steps) == 1:
        axes = [axes]
    for ax, s in zip(axes, steps):
        f = traj.frames[s]
        ax.scatter(f.positions[:, 0], f.positions[:, 1], c=f.object_ids,
                   s=2, cmap="tab10", vmin=0, vmax=9)
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1)
        ax.set_aspect("equal")
        ax.set_title(f"step {s}", fontsize=8)
        ax.tick_params(labelsize=6)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_mse_curves(report_csv, out_prefix):
    """Mean MSE vs rollout step, one PNG per split in the report CSV."""
    report_csv = Path(report_csv)
    if not report_csv.exists():
        raise ValidationError(f"report CSV not found: {report_csv}")
    by_split: dict = {}
    with report_csv.open() as fh:
        for row in csv.DictReader(fh):
            key = (row["split"], int(row["step"]))
            by_split.setdefault(key, []).append(float(row["mse"]))
    splits = sorted({k[0] for k in by_split})
    if not splits:
        raise ValidationError(f"no rows in report CSV {report_csv}")
    written = []
    for split in splits:
        steps = sorted(s for (sp, s) in by_split if sp == split)
        means = [sum(by_split[(split, s)]) / len(by_split[(split, s)]) for s in steps]
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.plot(steps, means, marker="o")
        ax.set_xlabel("rollout step")
        ax.set_ylabel("position MSE")
        ax.set_yscale("log")
        ax.set_title(f"split: {split}")
        fig.tight_layout()
        out = Path(f"{out_prefix}_{split}.png")
        fig.savefig(out, dpi=120)
        plt.close(fig)
        written.append(out)
    return written
