"""Versioned checkpoints: flat parameter arrays plus specs and metadata.

Stored with `np.savez`, so every array round-trips bit-exactly. Layout of
the archive (all keys are plain strings):

    format_version     int array, currently 1
    spec/<name>        MlpSpec as JSON (unicode array)
    values/<name>      flat float64 parameters of store <name>
    array/<key>        any extra float64 array (optimizer moments, ...)
    meta               JSON object (step, config text and hash, rng state)
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from unboundfield.network.mlp import MlpSpec, ParamStore

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    """Everything needed to resume training or render.

    Args:
        stores: Parameter stores by name ("prop", "nerf").
        arrays: Extra named arrays, e.g. Adam moments.
        meta: JSON-serializable metadata.
    """

    stores: dict[str, ParamStore]
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def save_checkpoint(path: str | Path, checkpoint: Checkpoint) -> Path:
    """Write a checkpoint archive and return its path."""
    path = Path(path)
    payload: dict[str, np.ndarray] = {"format_version": np.array([FORMAT_VERSION])}
    for name, store in checkpoint.stores.items():
        payload[f"spec/{name}"] = np.array(store.spec.to_json())
        payload[f"values/{name}"] = store.values
    for key, value in checkpoint.arrays.items():
        payload[f"array/{key}"] = np.asarray(value)
    payload["meta"] = np.array(json.dumps(checkpoint.meta, sort_keys=True))

    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        np.savez(fh, **payload)
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    """Read an archive written by `save_checkpoint`.

    Raises:
        ValueError: If the archive has an unknown format version.
    """
    with np.load(Path(path), allow_pickle=False) as data:
        version = int(data["format_version"][0])
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        stores, arrays = {}, {}
        for key in data.files:
            kind, _, name = key.partition("/")
            if kind == "spec":
                spec = MlpSpec.from_json(str(data[key]))
                stores[name] = ParamStore(spec, data[f"values/{name}"])
            elif kind == "array":
                arrays[name] = data[key].copy()
        meta = json.loads(str(data["meta"]))
    return Checkpoint(stores=stores, arrays=arrays, meta=meta)
