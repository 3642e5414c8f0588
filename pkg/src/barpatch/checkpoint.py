"""Self-describing checkpoint container.

Layout: 8-byte magic, little-endian u32 format version, u64 header length,
a JSON header (config, schedule, step, optimizer hyperparameters and an
index of arrays), then the arrays back to back as row-major little-endian
data.  Parameters and optimizer moments are float32; the torch RNG state is
uint8.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .model import BarPatchModel, ModelConfig

MAGIC = b"BARPATCH"
FORMAT_VERSION = 1
DTYPES = {"f4": np.dtype("<f4"), "u1": np.dtype("u1")}


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    model: BarPatchModel
    step: int = 0
    schedule: Optional[dict] = None
    optimizer_state: Optional[dict] = None
    rng_state: Optional[torch.Tensor] = None
    losses: Optional[list] = None  # per-step training losses, not serialized

    def parameter_count(self) -> int:
        return self.model.parameter_count()

    def to_bytes(self) -> bytes:
        arrays = []  # (name, dtype code, np array)
        names = []
        for name, p in self.model.named_parameters():
            arrays.append((f"param/{name}", "f4", p.detach().cpu().numpy()))
            names.append(name)
        optim = None
        if self.optimizer_state is not None:
            groups = []
            for g in self.optimizer_state["param_groups"]:
                groups.append({k: (list(v) if isinstance(v, tuple) else v)
                               for k, v in g.items() if k != "params"})
            steps = {}
            for idx, st in sorted(self.optimizer_state["state"].items()):
                name = names[idx]
                steps[name] = float(st["step"])
                arrays.append((f"optim/{name}/exp_avg", "f4", st["exp_avg"].cpu().numpy()))
                arrays.append((f"optim/{name}/exp_avg_sq", "f4", st["exp_avg_sq"].cpu().numpy()))
            optim = {"param_groups": groups, "steps": steps}
        if self.rng_state is not None:
            arrays.append(("rng/torch", "u1", self.rng_state.numpy()))

        index, blobs, offset = [], [], 0
        for name, code, arr in arrays:
            data = np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes()
            index.append({"name": name, "dtype": code, "shape": list(arr.shape),
                          "offset": offset, "nbytes": len(data)})
            blobs.append(data)
            offset += len(data)
        header = {
            "format_version": FORMAT_VERSION,
            "config": self.config.to_dict(),
            "schedule": self.schedule,
            "step": self.step,
            "parameter_count": self.parameter_count(),
            "optimizer": optim,
            "arrays": index,
        }
        head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(head)) + head + b"".join(blobs)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        if data[:8] != MAGIC:
            raise CheckpointError("not a checkpoint file")
        version, head_len = struct.unpack("<IQ", data[8:20])
        if version != FORMAT_VERSION:
            raise CheckpointVersionError(
                f"checkpoint format {version} is not supported (expected {FORMAT_VERSION})")
        header = json.loads(data[20:20 + head_len].decode("utf-8"))
        if header.get("format_version") != version:
            raise CheckpointVersionError("header and container versions disagree")
        base = 20 + head_len
        arrays = {}
        for entry in header["arrays"]:
            start = base + entry["offset"]
            buf = data[start:start + entry["nbytes"]]
            arrays[entry["name"]] = np.frombuffer(buf, dtype=DTYPES[entry["dtype"]]).reshape(entry["shape"])

        config = ModelConfig.from_dict(header["config"])
        model = BarPatchModel(config)
        params = dict(model.named_parameters())
        missing = [n for n in params if f"param/{n}" not in arrays]
        if missing:
            raise CheckpointError(f"checkpoint lacks parameters: {missing[:3]}")
        with torch.no_grad():
            for name, p in params.items():
                p.copy_(torch.from_numpy(arrays[f"param/{name}"].copy()))

        optimizer_state = None
        optim = header.get("optimizer")
        if optim is not None:
            names = list(params)
            state = {}
            for idx, name in enumerate(names):
                if name in optim["steps"]:
                    state[idx] = {
                        "step": torch.tensor(optim["steps"][name], dtype=torch.float32),
                        "exp_avg": torch.from_numpy(arrays[f"optim/{name}/exp_avg"].copy()),
                        "exp_avg_sq": torch.from_numpy(arrays[f"optim/{name}/exp_avg_sq"].copy()),
                    }
            groups = []
            for g in optim["param_groups"]:
                g = dict(g)
                if "betas" in g:
                    g["betas"] = tuple(g["betas"])
                g["params"] = list(range(len(names)))
                groups.append(g)
            optimizer_state = {"state": state, "param_groups": groups}

        rng = arrays.get("rng/torch")
        return cls(
            config=config,
            model=model,
            step=header["step"],
            schedule=header.get("schedule"),
            optimizer_state=optimizer_state,
            rng_state=torch.from_numpy(rng.copy()) if rng is not None else None,
        )

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())
