"""Checkpoint serialization: a JSON manifest plus a raw float32 blob.

The manifest records the model config, the training seed, and for every
tensor its name, shape, element count, and byte offset into the blob. The
blob is the little-endian float32 concatenation of the tensors in manifest
order. Both files are written deterministically, so re-saving an unchanged
model is byte-identical.
"""

import json
import os

import numpy as np

from .errors import BadCheckpointError
from .nn import Model, ModelConfig

FORMAT_VERSION = 1


def blob_path_for(manifest_path):
    stem, _ = os.path.splitext(manifest_path)
    return stem + ".bin"


def save_checkpoint(model, manifest_path, rng_seed=0):
    """Write <stem>.json and <stem>.bin; returns the manifest path."""
    tensors = []
    chunks = []
    offset = 0
    for name, t in model.store.tensors.items():
        raw = np.ascontiguousarray(t, dtype="<f4").tobytes()
        tensors.append(
            {
                "name": name,
                "shape": list(t.shape),
                "count": int(t.size),
                "offset": offset,
            }
        )
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": model.cfg.to_dict(),
        "rng_seed": int(rng_seed),
        "dtype": "<f4",
        "blob_bytes": offset,
        "tensors": tensors,
    }
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(blob_path_for(manifest_path), "wb") as f:
        f.write(b"".join(chunks))
    return manifest_path


def load_checkpoint(manifest_path):
    """Read a checkpoint pair; returns (model, manifest dict).

    Raises BadCheckpointError when the manifest and blob disagree or the
    recorded tensors do not match the declared architecture.
    """
    try:
        with open(manifest_path) as f:
            manifest = json.load(f)
    except json.JSONDecodeError as e:
        raise BadCheckpointError(f"manifest is not valid JSON: {e}") from e
    for key in ("format_version", "config", "rng_seed", "tensors", "blob_bytes"):
        if key not in manifest:
            raise BadCheckpointError(f"manifest missing key {key!r}")
    if manifest["format_version"] != FORMAT_VERSION:
        raise BadCheckpointError(
            f"unsupported format_version {manifest['format_version']}"
        )
    try:
        cfg = ModelConfig.from_dict(manifest["config"])
    except (TypeError, ValueError) as e:
        raise BadCheckpointError(f"bad model config: {e}") from e
    with open(blob_path_for(manifest_path), "rb") as f:
        blob = f.read()
    if len(blob) != manifest["blob_bytes"]:
        raise BadCheckpointError(
            f"blob is {len(blob)} bytes, manifest says {manifest['blob_bytes']}"
        )
    model = Model(cfg)
    recorded = {entry["name"]: entry for entry in manifest["tensors"]}
    if set(recorded) != set(model.store.tensors):
        raise BadCheckpointError("tensor names do not match the architecture")
    total = sum(e["count"] for e in recorded.values())
    if total * 4 != len(blob):
        raise BadCheckpointError(
            f"blob holds {len(blob) // 4} floats, manifest declares {total}"
        )
    for name, t in model.store.tensors.items():
        entry = recorded[name]
        if list(t.shape) != list(entry["shape"]):
            raise BadCheckpointError(
                f"tensor {name}: shape {entry['shape']} does not match "
                f"architecture {list(t.shape)}"
            )
        if entry["count"] != t.size:
            raise BadCheckpointError(f"tensor {name}: bad element count")
        if not 0 <= entry["offset"] <= len(blob) - 4 * entry["count"]:
            raise BadCheckpointError(f"tensor {name}: offset out of range")
        vals = np.frombuffer(
            blob, dtype="<f4", count=entry["count"], offset=entry["offset"]
        )
        t[...] = vals.reshape(t.shape)
    return model, manifest
