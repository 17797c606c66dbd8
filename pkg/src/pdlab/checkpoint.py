"""Checkpoint persistence: a JSON manifest plus a little-endian float64 blob.

Layout of a checkpoint directory::

    manifest.json   format_version, metadata, one entry per array in blob order
    params.bin      concatenated '<f8' data of every entry, manifest order
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .optim import AdamState, ParamStore

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
BLOB = "params.bin"
_LE_F8 = np.dtype("<f8")


class CheckpointError(Exception):
    code = "checkpoint-error"


class VersionMismatchError(CheckpointError):
    code = "version-mismatch"


class CorruptBlobError(CheckpointError):
    code = "corrupt-blob"


class ShapeMismatchError(CheckpointError):
    code = "shape-mismatch"

    def __init__(self, name: str, expected, found):
        self.name = name
        super().__init__(f"parameter {name!r}: expected shape {tuple(expected)}, checkpoint has {tuple(found)}")


@dataclass
class Checkpoint:
    params: ParamStore
    stage: str = ""
    epoch: int = 0
    config_hash: str = ""
    adam: Optional[AdamState] = None
    meta: dict = field(default_factory=dict)


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    chunks = []
    offset = 0

    def push(kind, name, arr, trainable=None):
        nonlocal offset
        arr = np.ascontiguousarray(arr, dtype=_LE_F8)
        entry = {"kind": kind, "name": name, "shape": list(arr.shape), "dtype": "float64",
                 "offset": offset, "nbytes": arr.nbytes}
        if trainable is not None:
            entry["trainable"] = trainable
        entries.append(entry)
        chunks.append(arr.tobytes())
        offset += arr.nbytes

    for name, t in ckpt.params.items():
        push("param", name, t.data, ckpt.params.is_trainable(name))
    adam_meta = None
    if ckpt.adam is not None:
        a = ckpt.adam
        adam_meta = {"beta1": a.beta1, "beta2": a.beta2, "eps": a.eps, "step": a.step}
        for name in a.m:
            push("adam.m", name, a.m[name])
            push("adam.v", name, a.v[name])

    manifest = {
        "format_version": FORMAT_VERSION,
        "byte_order": "little",
        "stage": ckpt.stage,
        "epoch": ckpt.epoch,
        "config_hash": ckpt.config_hash,
        "meta": ckpt.meta,
        "adam": adam_meta,
        "total_bytes": offset,
        "entries": entries,
    }
    tmp_blob = path / (BLOB + ".tmp")
    tmp_blob.write_bytes(b"".join(chunks))
    os.replace(tmp_blob, path / BLOB)
    (path / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def load_checkpoint(path, expected: Optional[ParamStore] = None) -> Checkpoint:
    """Read a checkpoint; with ``expected`` every shared name must match in shape."""
    path = Path(path)
    try:
        manifest = json.loads((path / MANIFEST).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read manifest in {path}: {exc}") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"checkpoint format_version {version!r}, expected {FORMAT_VERSION}")
    blob = (path / BLOB).read_bytes()
    if len(blob) != manifest["total_bytes"]:
        raise CorruptBlobError(f"blob has {len(blob)} bytes, manifest declares {manifest['total_bytes']}")

    params = ParamStore()
    adam = None
    if manifest.get("adam") is not None:
        am = manifest["adam"]
        adam = AdamState(beta1=am["beta1"], beta2=am["beta2"], eps=am["eps"], step=am["step"])
    for e in manifest["entries"]:
        shape = tuple(e["shape"])
        n = int(np.prod(shape, dtype=np.int64))
        if e["nbytes"] != n * 8 or e["offset"] + e["nbytes"] > len(blob):
            raise CorruptBlobError(f"entry {e['name']!r} does not fit the blob")
        arr = np.frombuffer(blob, dtype=_LE_F8, count=n, offset=e["offset"]).reshape(shape)
        arr = arr.astype(np.float64)
        if e["kind"] == "param":
            if expected is not None and e["name"] in expected and expected[e["name"]].shape != shape:
                raise ShapeMismatchError(e["name"], expected[e["name"]].shape, shape)
            params.add(e["name"], arr, e.get("trainable", True))
        elif e["kind"] == "adam.m":
            adam.m[e["name"]] = arr
        elif e["kind"] == "adam.v":
            adam.v[e["name"]] = arr
        else:
            raise CorruptBlobError(f"unknown entry kind {e['kind']!r}")
    return Checkpoint(params=params, stage=manifest["stage"], epoch=manifest["epoch"],
                      config_hash=manifest["config_hash"], adam=adam, meta=manifest.get("meta", {}))
