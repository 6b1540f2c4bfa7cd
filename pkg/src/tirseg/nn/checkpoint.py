"""Checkpoint directory: ``manifest.json`` plus one raw ``<name>.f64`` file per parameter.

Payload files are little-endian float64, row-major, no header.
"""

import json
import os

import numpy as np

FORMAT_VERSION = 1


def save_checkpoint(directory, named_params, hyperparameters=None):
    os.makedirs(directory, exist_ok=True)
    layers = []
    for name, p in named_params:
        fname = f"{name}.f64"
        p.value.astype("<f8").tofile(os.path.join(directory, fname))
        layers.append({"name": name, "shape": list(p.shape), "file": fname, "trainable": p.trainable})
    manifest = {"version": FORMAT_VERSION, "hyperparameters": hyperparameters or {}, "layers": layers}
    tmp = os.path.join(directory, "manifest.json.tmp")
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    os.replace(tmp, os.path.join(directory, "manifest.json"))


def read_manifest(directory):
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    if manifest.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {manifest.get('version')!r}")
    return manifest


def load_arrays(directory):
    """Return (manifest, {name: array})."""
    manifest = read_manifest(directory)
    arrays = {}
    for entry in manifest["layers"]:
        shape = tuple(entry["shape"])
        data = np.fromfile(os.path.join(directory, entry["file"]), dtype="<f8")
        if data.size != int(np.prod(shape)):
            raise ValueError(f"payload for {entry['name']} has {data.size} values, expected {shape}")
        arrays[entry["name"]] = data.reshape(shape).astype(np.float64)
    return manifest, arrays


def load_into(directory, named_params):
    manifest, arrays = load_arrays(directory)
    for name, p in named_params:
        if name not in arrays:
            raise KeyError(f"checkpoint has no parameter {name!r}")
        if arrays[name].shape != p.shape:
            raise ValueError(f"{name}: checkpoint shape {arrays[name].shape} vs model {p.shape}")
        p.value[...] = arrays[name]
    return manifest
