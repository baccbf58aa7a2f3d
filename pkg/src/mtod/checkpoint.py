"""Self-contained binary checkpoints: config + vocab + weights + CRC.

Layout: 8-byte magic, u32 format version, u64 header length, JSON header
(model config, embedded vocab, tensor manifest with name/shape/offset/numel),
then all tensors as contiguous little-endian float32 in manifest order, then a
u32 CRC32 over everything before it. A checkpoint restores bit-identical
forward behavior without any sidecar files.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from .model import ModelConfig, TransformerLM
from .vocab import Vocab, vocab_from_payload, vocab_payload

MAGIC = b"MTODCKPT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<IQ")  # version, header length


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(model: TransformerLM, vocab: Vocab, path: str | Path) -> None:
    state = model.state_dict()
    manifest = []
    offset = 0
    for name, tensor in state.items():
        numel = tensor.numel()
        manifest.append({"name": name, "shape": list(tensor.shape),
                         "offset": offset, "numel": numel})
        offset += 4 * numel
    header = json.dumps({
        "model_config": asdict(model.config),
        "vocab": vocab_payload(vocab),
        "tensors": manifest,
    }, sort_keys=True, separators=(",", ":")).encode("utf-8")

    chunks = [MAGIC, _PREFIX.pack(FORMAT_VERSION, len(header)), header]
    for tensor in state.values():
        array = tensor.detach().to(torch.float32).contiguous().numpy()
        chunks.append(np.ascontiguousarray(array, dtype="<f4").tobytes())
    blob = b"".join(chunks)
    blob += struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)
    Path(path).write_bytes(blob)


def load_checkpoint(path: str | Path) -> tuple[TransformerLM, Vocab]:
    try:
        blob = Path(path).read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    min_len = len(MAGIC) + _PREFIX.size + 4
    if len(blob) < min_len:
        raise CheckpointError(f"checkpoint truncated: {len(blob)} bytes")
    (stored_crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored_crc:
        raise CheckpointError("checksum failure: checkpoint corrupt or truncated")
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError("bad magic: not a model checkpoint")
    version, header_len = _PREFIX.unpack_from(blob, len(MAGIC))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"format version mismatch: file has {version}, "
                              f"reader supports {FORMAT_VERSION}")
    header_start = len(MAGIC) + _PREFIX.size
    try:
        header = json.loads(blob[header_start:header_start + header_len])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"unreadable header: {exc}") from None

    config = ModelConfig(**header["model_config"])
    vocab = vocab_from_payload(header["vocab"])
    model = TransformerLM(config)
    state = model.state_dict()

    manifest = {entry["name"]: entry for entry in header["tensors"]}
    missing = sorted(set(state) - set(manifest))
    extra = sorted(set(manifest) - set(state))
    if missing or extra:
        raise CheckpointError(f"tensor manifest mismatch: missing={missing} extra={extra}")

    payload_start = header_start + header_len
    payload = blob[payload_start:-4]
    new_state = {}
    for name, tensor in state.items():
        entry = manifest[name]
        if list(tensor.shape) != entry["shape"]:
            raise CheckpointError(
                f"shape mismatch for tensor {name!r}: file has {entry['shape']}, "
                f"model expects {list(tensor.shape)}")
        end = entry["offset"] + 4 * entry["numel"]
        if end > len(payload):
            raise CheckpointError(f"payload too short for tensor {name!r}")
        array = np.frombuffer(payload, dtype="<f4", count=entry["numel"],
                              offset=entry["offset"])
        new_state[name] = torch.from_numpy(array.copy()).reshape(entry["shape"])
    model.load_state_dict(new_state)
    model.eval()
    return model, vocab
