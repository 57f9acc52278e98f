"""Checkpoint directories: a JSON manifest plus named little-endian float32
parameter arrays, optional optimizer moments, and the loss history CSV.

Layout::

    <dir>/manifest.json
    <dir>/params/p0000.f32 ...
    <dir>/optim/m0000.f32, v0000.f32 ...   (Adam moments, optional)
    <dir>/history.csv                       (epoch,stage,L_dis,L_recons,total,wall_seconds)
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import FormatError
from .serialization import config_hash

FORMAT_VERSION = 1
HISTORY_HEADER = "epoch,stage,L_dis,L_recons,total,wall_seconds"


def _write_array(path: Path, tensor: torch.Tensor):
    arr = tensor.detach().cpu().numpy().astype("<f4")
    path.write_bytes(arr.tobytes())


def _read_array(path: Path, shape) -> torch.Tensor:
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    expect = int(np.prod(shape)) if shape else 1
    if raw.size != expect:
        raise FormatError(
            f"{path.name}: expected {expect} float32 values, found {raw.size}"
        )
    return torch.as_tensor(raw.reshape(shape).copy())


def format_history_row(epoch: int, stage: int, l_dis: float, l_recons: float,
                       total: float, wall: float) -> str:
    return (
        f"{epoch},{stage},{l_dis:.9e},{l_recons:.9e},{total:.9e},{wall:.3f}"
    )


@dataclass
class CheckpointBundle:
    model_config: dict
    train_config: dict
    stage: int
    epoch: int
    state_dict: dict
    adam_state: dict | None = None   # name -> {"step": int, "exp_avg": t, "exp_avg_sq": t}
    history: list = field(default_factory=list)
    model_config_hash: str = ""
    extra: dict = field(default_factory=dict)


def save_checkpoint(path, model: torch.nn.Module, model_config: dict,
                    train_config: dict, stage: int, epoch: int,
                    optimizer: torch.optim.Optimizer | None = None,
                    history: list | None = None,
                    extra: dict | None = None) -> str:
    """Write a checkpoint directory; returns the model config hash."""
    path = Path(path)
    (path / "params").mkdir(parents=True, exist_ok=True)
    entries = []
    name_to_param = {}
    for idx, (name, tensor) in enumerate(model.state_dict().items()):
        fn = f"params/p{idx:04d}.f32"
        _write_array(path / fn, tensor)
        entries.append({"name": name, "shape": list(tensor.shape), "file": fn})
        name_to_param[name] = tensor

    optim_manifest = None
    if optimizer is not None:
        (path / "optim").mkdir(exist_ok=True)
        param_names = {id(p): n for n, p in model.named_parameters()}
        optim_entries = []
        idx = 0
        for p, st in optimizer.state.items():
            name = param_names.get(id(p))
            if name is None or "exp_avg" not in st:
                continue
            mfile, vfile = f"optim/m{idx:04d}.f32", f"optim/v{idx:04d}.f32"
            _write_array(path / mfile, st["exp_avg"])
            _write_array(path / vfile, st["exp_avg_sq"])
            step = st["step"]
            optim_entries.append({
                "name": name,
                "step": int(step.item() if torch.is_tensor(step) else step),
                "exp_avg": mfile,
                "exp_avg_sq": vfile,
                "shape": list(st["exp_avg"].shape),
            })
            idx += 1
        optim_manifest = {"type": "adam", "entries": optim_entries}

    mhash = config_hash(model_config)
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": "checkpoint",
        "stage": int(stage),
        "epoch": int(epoch),
        "model_config": model_config,
        "model_config_hash": mhash,
        "train_config": train_config,
        "params": entries,
        "optimizer": optim_manifest,
        "extra": extra or {},
    }
    (path / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )
    if history is not None:
        lines = [HISTORY_HEADER] + list(history)
        (path / "history.csv").write_text("\n".join(lines) + "\n")
    return mhash


def load_checkpoint(path) -> CheckpointBundle:
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.exists():
        raise FormatError(f"not a checkpoint directory (no manifest.json): {path}")
    manifest = json.loads(mpath.read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise FormatError(
            f"unsupported checkpoint format_version {manifest.get('format_version')}"
        )
    state = {}
    for e in manifest["params"]:
        state[e["name"]] = _read_array(path / e["file"], e["shape"])
    adam = None
    if manifest.get("optimizer"):
        adam = {}
        for e in manifest["optimizer"]["entries"]:
            adam[e["name"]] = {
                "step": int(e["step"]),
                "exp_avg": _read_array(path / e["exp_avg"], e["shape"]),
                "exp_avg_sq": _read_array(path / e["exp_avg_sq"], e["shape"]),
            }
    history = []
    hpath = path / "history.csv"
    if hpath.exists():
        lines = hpath.read_text().strip().splitlines()
        history = lines[1:] if lines and lines[0] == HISTORY_HEADER else lines
    return CheckpointBundle(
        model_config=manifest["model_config"],
        train_config=manifest.get("train_config", {}),
        stage=int(manifest["stage"]),
        epoch=int(manifest["epoch"]),
        state_dict=state,
        adam_state=adam,
        history=history,
        model_config_hash=manifest.get("model_config_hash", ""),
        extra=manifest.get("extra", {}),
    )
