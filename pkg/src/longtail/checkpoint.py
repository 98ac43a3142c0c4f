"""Binary checkpoint format.

Layout::

    b"LTCKPT\\0\\0"                  8-byte magic
    uint32 LE                        format version
    uint64 LE                        header length H
    H bytes                          UTF-8 JSON header
    payload                          concatenated little-endian float32 tensors

The header holds the model config, vocabulary, training step, free-form
metadata and a manifest of ``{name, shape, offset, nbytes}`` entries, one per
named parameter, with offsets relative to the payload start.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .model import ModelConfig, Seq2SeqTransformer
from .vocab import Vocabulary

MAGIC = b"LTCKPT\0\0"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    model: Seq2SeqTransformer
    vocab: Vocabulary
    step: int = 0
    meta: dict = field(default_factory=dict)


def _manifest(model: Seq2SeqTransformer):
    entries, arrays, offset = [], [], 0
    for name, p in model.named_parameters():
        arr = np.ascontiguousarray(p.detach().cpu().numpy().astype("<f4"))
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": arr.nbytes})
        arrays.append(arr)
        offset += arr.nbytes
    return entries, arrays


def save_checkpoint(ck: Checkpoint, path) -> None:
    """Write atomically: temp file in the target directory, then rename."""
    path = Path(path)
    entries, arrays = _manifest(ck.model)
    header = {
        "config": ck.config.to_dict(),
        "vocab": {"tokens": list(ck.vocab.tokens), "counts": list(ck.vocab.counts)},
        "step": ck.step,
        "meta": ck.meta,
        "manifest": entries,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<IQ", FORMAT_VERSION, len(blob)))
            f.write(blob)
            for arr in arrays:
                f.write(arr.tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    fixed = len(MAGIC) + 12
    if len(data) < fixed or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic or truncated header)")
    version, hlen = struct.unpack("<IQ", data[len(MAGIC):fixed])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    if len(data) < fixed + hlen:
        raise CheckpointError(f"{path}: size mismatch, header needs {hlen} bytes, file has {len(data) - fixed}")
    header = json.loads(data[fixed:fixed + hlen].decode("utf-8"))
    payload = memoryview(data)[fixed + hlen:]
    entries = header["manifest"]
    expected = sum(e["nbytes"] for e in entries)
    if len(payload) != expected:
        raise CheckpointError(f"{path}: size mismatch, manifest declares {expected} payload bytes, found {len(payload)}")

    cfg = ModelConfig.from_dict(header["config"])
    model = Seq2SeqTransformer(cfg)
    params = dict(model.named_parameters())
    names = [e["name"] for e in entries]
    if sorted(names) != sorted(params) or len(set(names)) != len(names):
        raise CheckpointError(f"{path}: manifest does not match model parameters")
    with torch.no_grad():
        for e in entries:
            arr = np.frombuffer(payload, dtype="<f4", count=e["nbytes"] // 4, offset=e["offset"])
            arr = arr.reshape(e["shape"])
            p = params[e["name"]]
            if tuple(arr.shape) != tuple(p.shape):
                raise CheckpointError(f"{path}: tensor {e['name']} has shape {arr.shape}, model expects {tuple(p.shape)}")
            p.copy_(torch.from_numpy(arr.astype(np.float32)))
    model.eval()
    vocab = Vocabulary(tuple(header["vocab"]["tokens"]), tuple(header["vocab"]["counts"]))
    return Checkpoint(cfg, model, vocab, int(header["step"]), header.get("meta", {}))
