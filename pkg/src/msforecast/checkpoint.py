"""Checkpoint serialization.

A checkpoint is a directory with two files:

* ``manifest.json`` — model class, its config, and an ordered list of
  parameter records ``{"name", "shape", "dtype"}``.
* ``params.bin`` — the raw parameter data: little-endian 32-bit floats,
  concatenated in manifest order.

Round trips are bit-exact for float32 models.  Both files are written via a
temp file plus rename, so a crashed save never leaves a half-written
checkpoint behind.
"""

from __future__ import annotations

import json
import os
from typing import Optional, Tuple

import numpy as np
import torch

from .errors import ConfigError, DataError
from .ioutil import atomic_write_bytes, atomic_write_text
from .model import ModelConfig, MultiSpacePredictor, RecursivePredictor, SingleSpacePredictor

MANIFEST_NAME = "manifest.json"
PARAMS_NAME = "params.bin"
FORMAT_VERSION = 1


def save_checkpoint(model: RecursivePredictor, directory: str) -> None:
    """Write model parameters and config to a checkpoint directory."""
    state = model.state_dict()
    records = []
    chunks = []
    for name, tensor in state.items():
        arr = tensor.detach().cpu().numpy().astype("<f4")
        records.append({"name": name, "shape": list(arr.shape), "dtype": "float32"})
        chunks.append(arr.tobytes())
    manifest = {
        "format_version": FORMAT_VERSION,
        "arch": model.arch,
        "config": model.config.to_dict(),
        "params": records,
    }
    if model.arch == "single":
        manifest["depth"] = model.depth
    os.makedirs(directory, exist_ok=True)
    atomic_write_text(os.path.join(directory, MANIFEST_NAME), json.dumps(manifest, indent=2))
    atomic_write_bytes(os.path.join(directory, PARAMS_NAME), b"".join(chunks))


def _build(manifest: dict) -> RecursivePredictor:
    config = ModelConfig.from_dict(manifest["config"])
    arch = manifest.get("arch", "multi")
    if arch == "multi":
        return MultiSpacePredictor(config)
    if arch == "single":
        return SingleSpacePredictor(config, depth=int(manifest.get("depth", 1)))
    raise DataError(f"unknown model arch {arch!r} in checkpoint manifest")


def load_checkpoint(
    directory: str, model: Optional[RecursivePredictor] = None
) -> Tuple[RecursivePredictor, ModelConfig]:
    """Load a checkpoint, rebuilding the model from its manifest.

    When ``model`` is given its parameters are overwritten instead; a
    name/shape mismatch raises ConfigError with an explicit diff.
    """
    manifest_path = os.path.join(directory, MANIFEST_NAME)
    params_path = os.path.join(directory, PARAMS_NAME)
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"checkpoint manifest not found: {manifest_path}")
    except json.JSONDecodeError as exc:
        raise DataError(f"checkpoint manifest is not valid JSON: {exc}")
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DataError(
            f"unsupported checkpoint format version {manifest.get('format_version')!r}"
        )

    if model is None:
        model = _build(manifest)

    state = model.state_dict()
    mismatches = []
    manifest_names = [rec["name"] for rec in manifest["params"]]
    for rec in manifest["params"]:
        if rec["name"] not in state:
            mismatches.append(f"checkpoint has {rec['name']} {rec['shape']}, model does not")
        elif list(state[rec["name"]].shape) != list(rec["shape"]):
            mismatches.append(
                f"{rec['name']}: checkpoint {rec['shape']} vs model "
                f"{list(state[rec['name']].shape)}"
            )
    for name in state:
        if name not in manifest_names:
            raise_missing = f"model has {name} {list(state[name].shape)}, checkpoint does not"
            mismatches.append(raise_missing)
    if mismatches:
        raise ConfigError(
            "checkpoint/model mismatch:\n  " + "\n  ".join(mismatches)
        )

    expected = sum(int(np.prod(rec["shape"])) for rec in manifest["params"])
    try:
        raw = np.fromfile(params_path, dtype="<f4")
    except OSError as exc:
        raise DataError(f"cannot read checkpoint parameters {params_path}: {exc}")
    if raw.size != expected:
        raise DataError(
            f"parameter blob holds {raw.size} floats, manifest declares {expected}"
        )
    offset = 0
    loaded = {}
    for rec in manifest["params"]:
        n = int(np.prod(rec["shape"]))
        arr = raw[offset : offset + n].reshape(rec["shape"])
        loaded[rec["name"]] = torch.from_numpy(arr.copy())
        offset += n
    model.load_state_dict(loaded)
    return model, model.config
