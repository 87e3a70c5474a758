"""Training state as a directory of named dense arrays plus a JSON manifest.

One file per tensor keeps the format dead simple to inspect and diff; the
manifest carries names, shapes, the step counter, the RNG cursor, and both
the config hash and the full config (the latter so a mismatch error can name
the keys that differ instead of two opaque hashes).
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .arrayio import load_array, save_array
from .config import RunConfig, config_from_dict, config_hash
from .errors import CheckpointMismatchError, FormatError

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"


@dataclass
class TrainState:
    """Everything a resumed run needs to continue bit-identically."""

    config: RunConfig
    params: dict                 # name -> ad.Tensor, trainable
    step: int = 0
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)
    rng_epoch: int = 0
    rng_offset: int = 0          # samples consumed in the current epoch

    def __post_init__(self):
        for name in self.params:
            if name not in self.adam_m:
                self.adam_m[name] = np.zeros_like(self.params[name].data)
            if name not in self.adam_v:
                self.adam_v[name] = np.zeros_like(self.params[name].data)


def _tensor_files(state):
    files = {}
    for name, tensor in state.params.items():
        files[f"param_{name}"] = tensor.data
    for name, moment in state.adam_m.items():
        files[f"adam_m_{name}"] = moment
    for name, moment in state.adam_v.items():
        files[f"adam_v_{name}"] = moment
    return files


def save_checkpoint(directory, state):
    directory = str(directory)
    os.makedirs(directory, exist_ok=True)
    tensors = _tensor_files(state)
    manifest = {
        "version": MANIFEST_VERSION,
        "step": state.step,
        "config_hash": config_hash(state.config),
        "config": state.config.as_dict(),
        "rng": {"epoch": state.rng_epoch, "offset": state.rng_offset},
        "tensors": {name: {"file": name + ".dna", "shape": list(array.shape)}
                    for name, array in sorted(tensors.items())},
    }
    for name, array in tensors.items():
        save_array(os.path.join(directory, name + ".dna"), array)
    with open(os.path.join(directory, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _config_diff(expected, found):
    keys = sorted(set(expected) | set(found))
    return [k for k in keys if expected.get(k) != found.get(k)]


def load_checkpoint(directory, expected_config=None):
    """Rebuild a TrainState; verifies the config when one is expected.

    A hash mismatch raises CheckpointMismatchError naming the differing keys.
    """
    directory = str(directory)
    manifest_path = os.path.join(directory, MANIFEST_NAME)
    if not os.path.isfile(manifest_path):
        raise FormatError(f"no {MANIFEST_NAME} in {directory}")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("version") != MANIFEST_VERSION:
        raise FormatError(
            f"unsupported manifest version {manifest.get('version')}")
    cfg = config_from_dict(manifest["config"])
    if config_hash(cfg) != manifest["config_hash"]:
        raise FormatError("manifest config does not match its recorded hash")
    if expected_config is not None and config_hash(expected_config) != manifest["config_hash"]:
        differing = _config_diff(expected_config.as_dict(), manifest["config"])
        raise CheckpointMismatchError(
            "checkpoint config differs from the requested config at keys: "
            + ", ".join(differing))

    params, adam_m, adam_v = {}, {}, {}
    for name, entry in manifest["tensors"].items():
        array = load_array(os.path.join(directory, entry["file"]))
        if list(array.shape) != entry["shape"]:
            raise FormatError(
                f"tensor {name} has shape {list(array.shape)}, manifest says "
                f"{entry['shape']}")
        if name.startswith("param_"):
            params[name[len("param_"):]] = ad.Tensor(array, requires_grad=True)
        elif name.startswith("adam_m_"):
            adam_m[name[len("adam_m_"):]] = array
        elif name.startswith("adam_v_"):
            adam_v[name[len("adam_v_"):]] = array
        else:
            raise FormatError(f"unrecognized tensor entry {name!r}")
    missing = set(params) ^ set(adam_m) | set(params) ^ set(adam_v)
    if missing:
        raise FormatError(
            f"optimizer moments do not line up with parameters: {sorted(missing)}")
    rng = manifest.get("rng", {})
    return TrainState(config=cfg, params=params, step=int(manifest["step"]),
                      adam_m=adam_m, adam_v=adam_v,
                      rng_epoch=int(rng.get("epoch", 0)),
                      rng_offset=int(rng.get("offset", 0)))


def checkpoint_fingerprint(directory):
    """sha256 over every file's relative path and bytes; for bit-identity checks."""
    directory = str(directory)
    digest = hashlib.sha256()
    for root, _, files in sorted(os.walk(directory)):
        for fname in sorted(files):
            path = os.path.join(root, fname)
            rel = os.path.relpath(path, directory)
            digest.update(rel.encode("utf-8"))
            digest.update(b"\x00")
            with open(path, "rb") as fh:
                digest.update(fh.read())
            digest.update(b"\x00")
    return digest.hexdigest()
