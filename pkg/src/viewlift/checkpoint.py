"""Unified checkpoint archive: a zip of named float arrays (one per
parameter, organized into groups) plus a meta.json entry."""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

STEP1_GROUPS = ("encoder", "vae", "unet_base", "unet_lora", "cross_attn")
STEP2_GROUPS = ("v_in", "trans", "aggr", "campred")
ALL_GROUPS = STEP1_GROUPS + STEP2_GROUPS


class CheckpointError(RuntimeError):
    pass


@dataclass
class Checkpoint:
    groups: dict[str, dict[str, np.ndarray]]
    meta: dict
    optimizer: dict[str, np.ndarray] = field(default_factory=dict)

    def require(self, *names: str):
        missing = [n for n in names if n not in self.groups]
        if missing:
            raise CheckpointError(f"checkpoint is missing parameter groups: {missing}")

    def group_digest(self, name: str) -> str:
        return state_digest(self.groups[name])


def state_digest(state: dict[str, np.ndarray]) -> str:
    """Order-independent byte digest of a named array dict."""
    h = hashlib.sha256()
    for key in sorted(state):
        arr = np.ascontiguousarray(state[key])
        h.update(key.encode())
        h.update(str(arr.dtype).encode())
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def module_state(module: nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().copy() for k, v in module.state_dict().items()}


def load_module_state(module: nn.Module, state: dict[str, np.ndarray]):
    tensors = {k: torch.from_numpy(np.ascontiguousarray(v)) for k, v in state.items()}
    module.load_state_dict(tensors, strict=True)


def split_module_state(module: nn.Module, classify) -> dict[str, dict[str, np.ndarray]]:
    """Split a module's state dict into groups via ``classify(name) -> group``."""
    out: dict[str, dict[str, np.ndarray]] = {}
    for name, value in module_state(module).items():
        out.setdefault(classify(name), {})[name] = value
    return out


def save_checkpoint(
    path: str | Path,
    groups: dict[str, dict[str, np.ndarray]],
    meta: dict,
    optimizer: dict[str, np.ndarray] | None = None,
):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = dict(meta)
    meta["groups"] = sorted(groups)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("meta.json", json.dumps(meta, indent=1, sort_keys=True))
        for group, state in groups.items():
            for key, arr in state.items():
                _write_array(zf, f"params/{group}/{key}.npy", arr)
        for key, arr in (optimizer or {}).items():
            _write_array(zf, f"opt/{key}.npy", arr)


def _write_array(zf: zipfile.ZipFile, name: str, arr: np.ndarray):
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    zf.writestr(name, buf.getvalue())


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    groups: dict[str, dict[str, np.ndarray]] = {}
    optimizer: dict[str, np.ndarray] = {}
    with zipfile.ZipFile(path) as zf:
        try:
            meta = json.loads(zf.read("meta.json"))
        except KeyError as e:
            raise CheckpointError(f"{path} has no meta.json entry") from e
        for name in zf.namelist():
            if not name.endswith(".npy"):
                continue
            with zf.open(name) as fh:
                arr = np.lib.format.read_array(fh, allow_pickle=False)
            if name.startswith("params/"):
                _, group, key = name[: -len(".npy")].split("/", 2)
                groups.setdefault(group, {})[key] = arr
            elif name.startswith("opt/"):
                optimizer[name[len("opt/") : -len(".npy")]] = arr
    declared = set(meta.get("groups", []))
    if declared != set(groups):
        raise CheckpointError(
            f"{path}: declared groups {sorted(declared)} do not match stored {sorted(groups)}"
        )
    return Checkpoint(groups=groups, meta=meta, optimizer=optimizer)


def adam_state_arrays(optimizer: torch.optim.Optimizer, named: dict[str, nn.Parameter]) -> dict[str, np.ndarray]:
    """Flatten Adam moments (and step counts) into named arrays."""
    by_id = {id(p): name for name, p in named.items()}
    out: dict[str, np.ndarray] = {}
    for group in optimizer.param_groups:
        for p in group["params"]:
            state = optimizer.state.get(p)
            if not state:
                continue
            name = by_id[id(p)]
            out[f"{name}/exp_avg"] = state["exp_avg"].detach().cpu().numpy().copy()
            out[f"{name}/exp_avg_sq"] = state["exp_avg_sq"].detach().cpu().numpy().copy()
            out[f"{name}/step"] = np.asarray(float(state["step"]))
    return out


def restore_adam_state(
    optimizer: torch.optim.Optimizer,
    named: dict[str, nn.Parameter],
    arrays: dict[str, np.ndarray],
):
    for name, p in named.items():
        key = f"{name}/exp_avg"
        if key not in arrays:
            continue
        optimizer.state[p] = {
            "step": torch.tensor(float(arrays[f"{name}/step"])),
            "exp_avg": torch.from_numpy(np.ascontiguousarray(arrays[key])),
            "exp_avg_sq": torch.from_numpy(np.ascontiguousarray(arrays[f"{name}/exp_avg_sq"])),
        }
