"""Self-describing checkpoint container.

Layout: an 8-byte magic, a little-endian u64 header length, a canonical JSON
header (version, config echo, array directory, optional rng state), then the
raw little-endian array bytes in directory order. Arrays are stored sorted by
key, and the JSON is emitted with sorted keys, so save -> load -> save is
byte-identical.
"""
from __future__ import annotations

import base64
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from .core import ClassCatalog
from .networks import IterativeMaskVAE, ModelConfig, build_model

MAGIC = b"SSCKPT01"
VERSION = 1


class CheckpointError(ValueError):
    pass


def config_to_dict(cfg: ModelConfig) -> dict:
    d = asdict(cfg)
    d["catalog"] = {
        "names": list(cfg.catalog.names),
        "palette": [list(rgb) for rgb in cfg.catalog.palette],
    }
    return d


def config_from_dict(d: dict) -> ModelConfig:
    d = dict(d)
    cat = d.pop("catalog")
    catalog = ClassCatalog(
        names=tuple(cat["names"]),
        palette=tuple(tuple(rgb) for rgb in cat["palette"]),
    )
    tuple_fields = (
        "resolution",
        "context_channels",
        "context_strides",
        "mask_channels",
        "mask_strides",
        "decoder_channels",
        "decoder_strides",
        "order",
    )
    for k in tuple_fields:
        if d.get(k) is not None:
            d[k] = tuple(d[k])
    return ModelConfig(catalog=catalog, **d)


def save_checkpoint(
    path: str | Path,
    model: IterativeMaskVAE,
    extra: dict | None = None,
    rng_state: bytes | None = None,
) -> Path:
    path = Path(path)
    state = model.state_dict()
    arrays = {k: v.detach().cpu().numpy() for k, v in sorted(state.items())}

    directory = []
    offset = 0
    blobs = []
    for key, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        directory.append(
            {
                "key": key,
                "dtype": arr.dtype.name,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)

    header = {
        "version": VERSION,
        "config": config_to_dict(model.cfg),
        "arrays": directory,
        "extra": extra or {},
        "rng": base64.b64encode(rng_state).decode("ascii") if rng_state else None,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for raw in blobs:
            f.write(raw)
    return path


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Parse a checkpoint into (header, arrays). Rejects corrupt files with
    the byte offset of the problem."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < len(MAGIC) + 8:
        raise CheckpointError(f"{path}: truncated at offset {len(raw)}: no header")
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic at offset 0")
    (header_len,) = struct.unpack_from("<Q", raw, len(MAGIC))
    header_start = len(MAGIC) + 8
    if len(raw) < header_start + header_len:
        raise CheckpointError(
            f"{path}: truncated at offset {len(raw)}: header needs "
            f"{header_start + header_len} bytes"
        )
    try:
        header = json.loads(raw[header_start : header_start + header_len])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt header at offset {header_start}: {exc}") from None
    if header.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported version {header.get('version')}")

    blob_start = header_start + header_len
    arrays = {}
    for entry in header["arrays"]:
        lo = blob_start + entry["offset"]
        hi = lo + entry["nbytes"]
        if hi > len(raw):
            raise CheckpointError(
                f"{path}: truncated at offset {len(raw)}: array {entry['key']!r} "
                f"needs bytes up to {hi}"
            )
        arrays[entry["key"]] = np.frombuffer(
            raw[lo:hi], dtype=np.dtype(entry["dtype"]).newbyteorder("<")
        ).reshape(entry["shape"]).copy()
    return header, arrays


def load_model(
    path: str | Path,
    expected_catalog: ClassCatalog | None = None,
    expected_resolution: tuple[int, int] | None = None,
) -> IterativeMaskVAE:
    """Rebuild a model from a checkpoint; rejects catalog/resolution mismatches."""
    header, arrays = read_checkpoint(path)
    cfg = config_from_dict(header["config"])
    if expected_catalog is not None and cfg.catalog.names != expected_catalog.names:
        raise CheckpointError(
            f"{path}: checkpoint catalog {cfg.catalog.names} does not match "
            f"expected {expected_catalog.names}"
        )
    if expected_resolution is not None and cfg.resolution != tuple(expected_resolution):
        raise CheckpointError(
            f"{path}: checkpoint resolution {cfg.resolution} does not match "
            f"expected {tuple(expected_resolution)}"
        )
    model = build_model(cfg, seed=0)
    state = {k: torch.from_numpy(v) for k, v in arrays.items()}
    model.load_state_dict(state)
    model.eval()
    return model


def load_rng_state(path: str | Path) -> bytes | None:
    header, _ = read_checkpoint(path)
    return base64.b64decode(header["rng"]) if header.get("rng") else None


def load_extra(path: str | Path) -> dict:
    header, _ = read_checkpoint(path)
    return header.get("extra", {})
