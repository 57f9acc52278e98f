"""Loss functions, the two-stage optimization procedure, and checkpoint
wiring.

Stage 1 ("velocity field reconstruction"): every ground-truth frame is
encoded and the decoder is trained to reproduce that frame's velocities;
only encoder and decoder parameters are optimized.

Stage 2 ("joint"): each training window is encoded once at its first frame,
the simulator is unrolled over the window, and c1 * L_dis + c2 * L_recons
is backpropagated through the whole unroll into all three components.

All error means sum over the 2 coordinates and average over points and
frames, so a constant offset delta contributes ||delta||^2 exactly.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from .encoder import plan_grouping
from .errors import FormatError, NumericalError, ValidationError
from .model import (
    BatchedLatent,
    ModelConfig,
    NeuralSimulator,
    batched_graphs,
    make_model,
    step_tensors,
)
from .serialization import config_hash, dataclass_to_dict
from .state import Trajectory
from .trajio import read_trajectory


@dataclass
class TrainConfig:
    """Optimization hyperparameters for one stage.

    window_length counts frames per training window (a 20-frame window is
    unrolled over 19 Euler transitions); window_stride=0 means
    non-overlapping windows. recon_queries subsamples the stage-1
    reconstruction targets per frame (0 = use every mass point).
    """

    stage: int = 1
    epochs: int = 2000
    batch_size: int = 16
    learning_rate: float = 1e-3
    schedule: str = "cosine"
    clip_norm: float = 1.0
    c1: float = 1.0
    c2: float = 1.0
    window_length: int = 20
    window_stride: int = 0
    seed: int = 0
    recon_queries: int = 0
    finetune_fraction: float = 1.0

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ValidationError("stage must be 1 or 2")
        if self.c1 < 0 or self.c2 < 0:
            raise ValidationError("loss weights must be >= 0")
        if self.window_length < 2:
            raise ValidationError("window_length must be >= 2")
        if self.schedule not in ("cosine", "constant"):
            raise ValidationError(f"unknown schedule {self.schedule!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValidationError("bad epochs/batch_size")
        if not (0.0 < self.finetune_fraction <= 1.0):
            raise ValidationError("finetune_fraction must lie in (0, 1]")

    @property
    def stride(self) -> int:
        return self.window_stride if self.window_stride > 0 else self.window_length


# ---------------------------------------------------------------------------
# losses


def displacement_loss(pred_positions, gt_positions) -> float:
    """Mean over frames and points of squared position error (Eq. target:
    identical sequences -> 0; constant offset delta -> ||delta||^2)."""
    if torch.is_tensor(pred_positions):
        pred, gt = pred_positions, gt_positions
        if pred.shape != gt.shape:
            raise ValidationError("shape mismatch in displacement loss")
        return ((pred - gt) ** 2).sum(-1).mean()
    pred = np.asarray(pred_positions, dtype=np.float64)
    gt = np.asarray(gt_positions, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValidationError("shape mismatch in displacement loss")
    return float(((pred - gt) ** 2).sum(-1).mean())


def reconstruction_loss(traj: Trajectory, model: NeuralSimulator) -> float:
    """Stage-1 style velocity reconstruction error over all frames, with the
    latent re-encoded from each ground-truth frame."""
    if traj.n_frames < 1:
        raise ValidationError("empty trajectory")
    total = 0.0
    with torch.no_grad():
        for cloud in traj.frames:
            z = model.encode(cloud)
            vhat = model.decode(cloud.positions, z)
            v = torch.as_tensor(cloud.velocities, dtype=vhat.dtype)
            total += float(((vhat - v) ** 2).sum(-1).mean())
    return total / traj.n_frames


# ---------------------------------------------------------------------------
# dataset wrapper


class TrainingData:
    """Trajectories plus cached grouping plans and frame tensors."""

    def __init__(self, trajectories: list, model_cfg: ModelConfig,
                 dtype=torch.float32):
        if not trajectories:
            raise ValidationError("dataset is empty")
        self.trajs = trajectories
        self.cfg = model_cfg
        self.dtype = dtype
        dts = {t.dt for t in trajectories}
        if len(dts) != 1:
            raise ValidationError(f"mixed frame dt in dataset: {sorted(dts)}")
        self.dt = trajectories[0].dt
        self.pos = [
            torch.as_tensor(t.positions_array(), dtype=dtype) for t in trajectories
        ]
        self.vel = [
            torch.as_tensor(t.velocities_array(), dtype=dtype) for t in trajectories
        ]
        self._plans: dict = {}

    def plan(self, ti: int, fi: int):
        key = (ti, fi)
        if key not in self._plans:
            frame = self.trajs[ti].frames[fi]
            self._plans[key] = plan_grouping(
                frame.positions, frame.object_ids, self.cfg.encoder
            )
        return self._plans[key]

    def signature(self, ti: int):
        return self.trajs[ti].frames[0].object_ids.tobytes()

    def frames(self):
        return [
            (ti, fi)
            for ti, t in enumerate(self.trajs)
            for fi in range(t.n_frames)
        ]

    def windows(self, length: int, stride: int):
        out = []
        for ti, t in enumerate(self.trajs):
            start = 0
            while start + length <= t.n_frames:
                out.append((ti, start))
                start += stride
        if not out:
            raise ValidationError(
                f"no window of {length} frames fits the dataset"
            )
        return out


def load_dataset(data_dir, split: str | None = None) -> list:
    """Load all trajectory directories under data_dir[/split], sorted."""
    root = Path(data_dir)
    if split is not None:
        root = root / split
    if not root.exists():
        raise FormatError(f"dataset directory not found: {root}")
    dirs = sorted(p for p in root.iterdir() if (p / "meta.json").exists())
    if not dirs:
        raise FormatError(f"no trajectory directories under {root}")
    return [read_trajectory(p) for p in dirs]


# ---------------------------------------------------------------------------
# internals


def _epoch_rng(seed: int, stage: int, epoch: int, extra: int = 0):
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed & 0xFFFFFFFF,
                               spawn_key=(stage, epoch, extra))
    )


def _lr_at(cfg: TrainConfig, epoch: int) -> float:
    if cfg.schedule == "constant" or cfg.epochs <= 1:
        return cfg.learning_rate
    return cfg.learning_rate * 0.5 * (1 + math.cos(math.pi * epoch / cfg.epochs))


def _group_by_signature(data: TrainingData, items: list) -> list:
    groups: dict = {}
    order = []
    for it in items:
        key = data.signature(it[0])
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(it)
    return [groups[k] for k in order]


def _encode_batch(model: NeuralSimulator, data: TrainingData, items: list):
    """Encode frames [(ti, fi)] sharing an object layout. Returns
    (positions (B,N,2), velocities, BatchedLatent)."""
    pos = torch.stack([data.pos[ti][fi] for ti, fi in items])
    vel = torch.stack([data.vel[ti][fi] for ti, fi in items])
    plans = [data.plan(ti, fi) for ti, fi in items]
    ctl_pos, theta, ctx, src = model.encoder.forward_batched(pos, vel, plans)
    obj = torch.as_tensor(plans[0].latent_object_ids, dtype=torch.long)
    zb = BatchedLatent(ctl_pos, theta, ctx, src, obj)
    return pos, vel, zb


def stage1_batch_loss(model: NeuralSimulator, data: TrainingData, items: list,
                      query_idx: torch.Tensor | None = None) -> torch.Tensor:
    """Reconstruction loss over a batch of frames; query_idx (B, Q) selects
    target points (None = all)."""
    pos, vel, zb = _encode_batch(model, data, items)
    if query_idx is not None:
        pos = torch.gather(pos, 1, query_idx.unsqueeze(-1).expand(*query_idx.shape, 2))
        vel = torch.gather(vel, 1, query_idx.unsqueeze(-1).expand(*query_idx.shape, 2))
    vhat = model.decoder(pos, zb.positions, zb.orientations, zb.contexts)
    return ((vhat - vel) ** 2).sum(-1).mean()


def stage2_window_loss(model: NeuralSimulator, data: TrainingData, items: list,
                       cfg: TrainConfig):
    """Unroll a batch of windows [(ti, start)] and return
    (L_dis, L_recons, n_inter_edges) with losses as tensors. Raises
    NumericalError with the failing step index if the rollout goes
    non-finite."""
    w = cfg.window_length
    starts = [(ti, start) for ti, start in items]
    pos, _, zb = _encode_batch(model, data, starts)
    object_ids = data.trajs[items[0][0]].frames[0].object_ids
    gt_pos = torch.stack(
        [data.pos[ti][start:start + w] for ti, start in items]
    )  # (B, W, N, 2)
    gt_vel = torch.stack(
        [data.vel[ti][start:start + w] for ti, start in items]
    )
    dis_terms, rec_terms = [], []
    n_inter = 0
    for t in range(1, w):
        graphs = batched_graphs(model, pos, zb, object_ids)
        n_inter += sum(int((g.labels == 1).sum()) for g in graphs)
        new_pos, vel, zb = step_tensors(model, pos, zb, graphs, data.dt, object_ids)
        if not torch.isfinite(new_pos).all():
            raise NumericalError(f"stage-2 rollout went non-finite at step {t}")
        rec_terms.append(((vel - gt_vel[:, t - 1]) ** 2).sum(-1).mean())
        dis_terms.append(((new_pos - gt_pos[:, t]) ** 2).sum(-1).mean())
        pos = new_pos
    l_dis = torch.stack(dis_terms).mean()
    l_rec = torch.stack(rec_terms).mean()
    return l_dis, l_rec, n_inter


_GRAD_GROUPS = (
    ("encoder", "encoder."),
    ("decoder", "decoder."),
    ("processor.inner", "dynamics.inner_kernels."),
    ("processor.inter", "dynamics.inter_kernels."),
    ("processor.core", "dynamics."),
)


def _grad_group_flags(model: NeuralSimulator, flags: dict):
    for name, param in model.named_parameters():
        if param.grad is None or not param.grad.abs().sum().item() > 0:
            continue
        for gname, prefix in _GRAD_GROUPS:
            if name.startswith(prefix):
                if gname == "processor.core" and (
                    name.startswith("dynamics.inner_kernels.")
                    or name.startswith("dynamics.inter_kernels.")
                ):
                    continue
                flags[gname] = True


def _check_grad_groups(flags: dict, model_cfg: ModelConfig, saw_inter: bool):
    required = {"encoder", "decoder", "processor.inner", "processor.core"}
    if saw_inter and not model_cfg.static_adjacency:
        required.add("processor.inter")
    missing = sorted(g for g in required if not flags.get(g))
    if missing:
        raise ValidationError(
            f"no gradient reached parameter group(s): {', '.join(missing)}"
        )


@dataclass
class TrainResult:
    model: NeuralSimulator
    history: list
    checkpoint_dir: str | None
    epochs_run: int
    final_loss: float = float("nan")


def _make_optimizer(params, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=cfg.learning_rate)


def _restore_adam(optimizer: torch.optim.Optimizer, model: NeuralSimulator,
                  adam_state: dict):
    named = dict(model.named_parameters())
    for name, st in adam_state.items():
        if name not in named:
            raise ValidationError(f"optimizer state for unknown parameter {name}")
        p = named[name]
        optimizer.state[p] = {
            "step": torch.tensor(float(st["step"])),
            "exp_avg": st["exp_avg"].to(p.dtype),
            "exp_avg_sq": st["exp_avg_sq"].to(p.dtype),
        }


def _finalize(model, model_cfg, train_cfg, stage, epoch, optimizer, history,
              out_dir, final_loss):
    if out_dir is not None:
        ckpt.save_checkpoint(
            out_dir, model, dataclass_to_dict(model_cfg),
            dataclass_to_dict(train_cfg), stage, epoch,
            optimizer=optimizer, history=history,
        )
    return TrainResult(
        model=model, history=history,
        checkpoint_dir=None if out_dir is None else str(out_dir),
        epochs_run=epoch, final_loss=final_loss,
    )


def train_stage1(dataset: list, model_cfg: ModelConfig, cfg: TrainConfig,
                 out_dir=None, resume=None) -> TrainResult:
    """Optimize encoder+decoder on velocity reconstruction."""
    if cfg.stage != 1:
        raise ValidationError("train_stage1 needs a stage-1 TrainConfig")
    data = TrainingData(dataset, model_cfg)
    start_epoch = 0
    history: list = []
    if resume is not None:
        bundle = ckpt.load_checkpoint(resume)
        if bundle.stage != 1:
            raise ValidationError(f"cannot resume stage 1 from a stage-{bundle.stage} checkpoint")
        if bundle.model_config_hash != config_hash(dataclass_to_dict(model_cfg)):
            raise ValidationError(
                "checkpoint model-config hash does not match the current config"
            )
        model = make_model(model_cfg, seed=cfg.seed)
        model.load_state_dict(bundle.state_dict)
        start_epoch = bundle.epoch
        history = list(bundle.history)
    else:
        model = make_model(model_cfg, seed=cfg.seed)
    params = list(model.encoder.parameters()) + list(model.decoder.parameters())
    optimizer = _make_optimizer(params, cfg)
    if resume is not None and bundle.adam_state:
        _restore_adam(optimizer, model, bundle.adam_state)

    frames = data.frames()
    t0 = time.perf_counter()
    last = float("nan")
    for epoch in range(start_epoch, cfg.epochs):
        lr = _lr_at(cfg, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = _epoch_rng(cfg.seed, 1, epoch).permutation(len(frames))
        epoch_loss, seen = 0.0, 0
        for bi in range(0, len(order), cfg.batch_size):
            batch = [frames[i] for i in order[bi:bi + cfg.batch_size]]
            optimizer.zero_grad(set_to_none=True)
            loss = torch.zeros((), dtype=torch.float32)
            for items in _group_by_signature(data, batch):
                qidx = None
                if cfg.recon_queries > 0:
                    rng = _epoch_rng(cfg.seed, 1, epoch, extra=bi + 1)
                    npts = data.pos[items[0][0]].shape[1]
                    k = min(cfg.recon_queries, npts)
                    qidx = torch.as_tensor(
                        np.stack([rng.choice(npts, size=k, replace=False)
                                  for _ in items]),
                        dtype=torch.long,
                    )
                part = stage1_batch_loss(model, data, items, qidx)
                loss = loss + part * (len(items) / len(batch))
            if not torch.isfinite(loss):
                raise NumericalError(f"non-finite stage-1 loss at epoch {epoch}")
            loss.backward()
            torch.nn.utils.clip_grad_norm_(params, cfg.clip_norm)
            optimizer.step()
            epoch_loss += float(loss) * len(batch)
            seen += len(batch)
        last = epoch_loss / max(seen, 1)
        history.append(ckpt.format_history_row(
            epoch + 1, 1, 0.0, last, last, time.perf_counter() - t0
        ))
    return _finalize(model, model_cfg, cfg, 1, cfg.epochs, optimizer, history,
                     out_dir, last)


def train_stage2(dataset: list, stage1_checkpoint, model_cfg: ModelConfig,
                 cfg: TrainConfig, out_dir=None, resume=None) -> TrainResult:
    """Jointly optimize encoder, processor, and decoder through unrolled
    windows, starting from a stage-1 checkpoint."""
    if cfg.stage != 2:
        raise ValidationError("train_stage2 needs a stage-2 TrainConfig")
    if cfg.finetune_fraction < 1.0:
        rng = _epoch_rng(cfg.seed, 2, 0, extra=777)
        keep = max(1, math.ceil(cfg.finetune_fraction * len(dataset)))
        idx = sorted(rng.permutation(len(dataset))[:keep].tolist())
        dataset = [dataset[i] for i in idx]
    data = TrainingData(dataset, model_cfg)
    history: list = []
    start_epoch = 0
    if resume is not None:
        bundle = ckpt.load_checkpoint(resume)
        if bundle.stage != 2:
            raise ValidationError(f"cannot resume stage 2 from a stage-{bundle.stage} checkpoint")
        if bundle.model_config_hash != config_hash(dataclass_to_dict(model_cfg)):
            raise ValidationError(
                "checkpoint model-config hash does not match the current config"
            )
        model = make_model(model_cfg, seed=cfg.seed)
        model.load_state_dict(bundle.state_dict)
        start_epoch = bundle.epoch
        history = list(bundle.history)
    else:
        if stage1_checkpoint is None:
            raise ValidationError("stage 2 requires a stage-1 checkpoint")
        bundle = ckpt.load_checkpoint(stage1_checkpoint)
        if bundle.stage != 1:
            raise ValidationError(
                f"stage 2 must start from a stage-1 checkpoint, got stage {bundle.stage}"
            )
        if bundle.model_config_hash != config_hash(dataclass_to_dict(model_cfg)):
            raise ValidationError(
                "stage-1 checkpoint model-config hash does not match the current config"
            )
        model = make_model(model_cfg, seed=cfg.seed)
        model.load_state_dict(bundle.state_dict)
        bundle = None

    params = list(model.parameters())
    optimizer = _make_optimizer(params, cfg)
    if resume is not None and bundle is not None and bundle.adam_state:
        _restore_adam(optimizer, model, bundle.adam_state)

    windows = data.windows(cfg.window_length, cfg.stride)
    flags: dict = {}
    saw_inter = False
    checked = start_epoch > 0
    t0 = time.perf_counter()
    last = float("nan")
    for epoch in range(start_epoch, cfg.epochs):
        lr = _lr_at(cfg, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = _epoch_rng(cfg.seed, 2, epoch).permutation(len(windows))
        e_dis, e_rec, seen = 0.0, 0.0, 0
        for bi in range(0, len(order), cfg.batch_size):
            batch = [windows[i] for i in order[bi:bi + cfg.batch_size]]
            optimizer.zero_grad(set_to_none=True)
            loss = torch.zeros((), dtype=torch.float32)
            b_dis = b_rec = 0.0
            for items in _group_by_signature(data, batch):
                l_dis, l_rec, n_inter = stage2_window_loss(model, data, items, cfg)
                frac = len(items) / len(batch)
                loss = loss + (cfg.c1 * l_dis + cfg.c2 * l_rec) * frac
                b_dis += float(l_dis) * frac
                b_rec += float(l_rec) * frac
                saw_inter = saw_inter or n_inter > 0
            if not torch.isfinite(loss):
                raise NumericalError(f"non-finite stage-2 loss at epoch {epoch}")
            loss.backward()
            if not checked:
                _grad_group_flags(model, flags)
            torch.nn.utils.clip_grad_norm_(params, cfg.clip_norm)
            optimizer.step()
            e_dis += b_dis * len(batch)
            e_rec += b_rec * len(batch)
            seen += len(batch)
        if not checked:
            # inter kernels only see gradient once a collision occurs; defer
            # the requirement until an inter edge showed up this epoch
            _check_grad_groups(flags, model_cfg, saw_inter)
            checked = True
        e_dis /= max(seen, 1)
        e_rec /= max(seen, 1)
        last = cfg.c1 * e_dis + cfg.c2 * e_rec
        history.append(ckpt.format_history_row(
            epoch + 1, 2, e_dis, e_rec, last, time.perf_counter() - t0
        ))
    return _finalize(model, model_cfg, cfg, 2, cfg.epochs, optimizer, history,
                     out_dir, last)


def build_model_from_checkpoint(path, model_config_cls=ModelConfig) -> tuple:
    """Rebuild a NeuralSimulator from a checkpoint directory. Returns
    (model, bundle)."""
    from .serialization import dataclass_from_dict

    bundle = ckpt.load_checkpoint(path)
    model_cfg = dataclass_from_dict(model_config_cls, bundle.model_config, "model")
    model = NeuralSimulator(model_cfg)
    model.load_state_dict(bundle.state_dict)
    model.eval()
    return model, bundle
