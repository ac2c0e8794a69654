"""Binary formats for embeddings (EMB1) and masks (MSK1), plus a deterministic pseudo-encoder.

EMB1 layout (little-endian)::

    b"EMB1" | count:u32 | dim:u32 | count*dim float32, row-major

Row labels live in a JSON sidecar next to the binary (``<stem>.labels.json``)
mapping the row index (as a string) to the label.

MSK1 layout (little-endian)::

    b"MSK1" | width:u32 | height:u32 | height*width u16 class ids, row-major

Class id 65535 marks ignored pixels.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .embedding import EmbeddingSet
from .errors import (
    BadMagicError,
    FormatError,
    MissingLabelError,
    NonFiniteError,
    TrailingBytesError,
    TruncatedFileError,
)
from .metrics import IGNORE_VALUE, SegMask

PathLike = Union[str, os.PathLike]

EMB1_MAGIC = b"EMB1"
MSK1_MAGIC = b"MSK1"
HEADER = struct.Struct("<4sII")


def sidecar_path(path: PathLike) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".labels.json")


def _read_header(data: bytes, magic: bytes, path) -> tuple:
    if len(data) < HEADER.size:
        raise TruncatedFileError(
            f"{path}: header needs {HEADER.size} bytes, file has {len(data)}",
            expected=HEADER.size,
            actual=len(data),
        )
    got, a, b = HEADER.unpack_from(data)
    if got != magic:
        raise BadMagicError(f"{path}: bad magic {got!r}, expected {magic!r}")
    return a, b


def _check_payload(data: bytes, expected_payload: int, path) -> None:
    expected = HEADER.size + expected_payload
    if len(data) < expected:
        raise TruncatedFileError(
            f"{path}: truncated, expected {expected} bytes but found {len(data)}",
            expected=expected,
            actual=len(data),
        )
    if len(data) > expected:
        raise TrailingBytesError(f"{path}: {len(data) - expected} trailing bytes after payload")


def encode_emb1(rows: np.ndarray) -> bytes:
    rows = np.asarray(rows)
    if rows.ndim != 2:
        raise FormatError(f"EMB1 payload must be 2-D, got shape {rows.shape}")
    with np.errstate(over="ignore"):
        payload = rows.astype("<f4")
    if not np.all(np.isfinite(payload)):
        raise NonFiniteError("refusing to write NaN/Inf (or float32-overflowing) values to EMB1")
    count, dim = payload.shape
    return HEADER.pack(EMB1_MAGIC, count, dim) + payload.tobytes(order="C")


def decode_emb1(data: bytes, path="<bytes>") -> np.ndarray:
    count, dim = _read_header(data, EMB1_MAGIC, path)
    # compare against the real size before trusting count*dim for allocation
    _check_payload(data, count * dim * 4, path)
    arr = np.frombuffer(data, dtype="<f4", count=count * dim, offset=HEADER.size)
    return arr.reshape(count, dim).astype(np.float64)


def write_emb1(path: PathLike, emb: Union[EmbeddingSet, np.ndarray], labels=None) -> None:
    """Write an embedding set; labels (from ``emb`` or ``labels``) go to the sidecar."""
    if isinstance(emb, EmbeddingSet):
        rows = emb.rows
        labels = emb.labels if labels is None else labels
    else:
        rows = np.asarray(emb, dtype=np.float64)
        if rows.ndim == 2 and rows.shape[0] == 0 and rows.shape[1] == 0:
            rows = rows.reshape(0, 0)
    data = encode_emb1(rows)
    Path(path).write_bytes(data)
    if labels is not None:
        mapping = {str(i): str(label) for i, label in enumerate(labels)}
        sidecar_path(path).write_text(json.dumps(mapping, indent=1, sort_keys=False) + "\n")


def read_emb1_array(path: PathLike) -> np.ndarray:
    return decode_emb1(Path(path).read_bytes(), path)


def read_labels(path: PathLike, count: int, required: bool = False) -> Optional[tuple]:
    side = sidecar_path(path)
    if not side.exists():
        if required:
            raise MissingLabelError(f"missing label sidecar {side} for {path}")
        return None
    try:
        mapping = json.loads(side.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{side}: invalid JSON ({exc})") from exc
    if isinstance(mapping, list):
        labels = [str(x) for x in mapping]
    else:
        try:
            labels = [str(mapping[str(i)]) for i in range(count)]
        except KeyError as exc:
            raise MissingLabelError(f"{side}: no label for row {exc.args[0]}") from exc
    if len(labels) != count:
        raise MissingLabelError(f"{side}: {len(labels)} labels for {count} rows")
    return tuple(labels)


def read_emb1(path: PathLike, require_labels: bool = False) -> EmbeddingSet:
    rows = read_emb1_array(path)
    labels = read_labels(path, rows.shape[0], required=require_labels)
    if rows.shape[1] == 0:
        # count=0 files may carry dim=0; keep a placeholder width so the set stays 2-D
        rows = rows.reshape(rows.shape[0], 1)
    return EmbeddingSet(rows, labels)


def encode_msk1(mask: SegMask) -> bytes:
    labels = np.asarray(mask.labels).astype("<u2")
    h, w = labels.shape
    return HEADER.pack(MSK1_MAGIC, w, h) + labels.tobytes(order="C")


def decode_msk1(data: bytes, path="<bytes>") -> SegMask:
    w, h = _read_header(data, MSK1_MAGIC, path)
    _check_payload(data, w * h * 2, path)
    arr = np.frombuffer(data, dtype="<u2", count=w * h, offset=HEADER.size)
    return SegMask(arr.reshape(h, w).astype(np.uint16))


def write_msk1(path: PathLike, mask: SegMask) -> None:
    Path(path).write_bytes(encode_msk1(mask))


def read_msk1(path: PathLike) -> SegMask:
    return decode_msk1(Path(path).read_bytes(), path)


def read_png_mask(path: PathLike) -> SegMask:
    """Single-channel 16-bit grayscale PNG where the pixel value is the class id."""
    from PIL import Image

    with Image.open(path) as im:
        if im.mode not in ("I;16", "I;16B", "I;16L", "I", "L"):
            raise FormatError(f"{path}: expected single-channel grayscale PNG, got mode {im.mode}")
        arr = np.array(im)
    if arr.ndim != 2:
        raise FormatError(f"{path}: expected a 2-D mask, got shape {arr.shape}")
    if arr.min() < 0 or arr.max() > IGNORE_VALUE:
        raise FormatError(f"{path}: pixel values outside the u16 range")
    return SegMask(arr.astype(np.uint16))


def write_png_mask(path: PathLike, mask: SegMask) -> None:
    from PIL import Image

    Image.fromarray(np.asarray(mask.labels, dtype=np.uint16)).save(path)


def read_mask(path: PathLike) -> SegMask:
    if Path(path).suffix.lower() == ".png":
        return read_png_mask(path)
    return read_msk1(path)


def pseudo_encode(label: str, dim: int, seed: int = 0) -> np.ndarray:
    """Deterministic unit vector standing in for a text encoder.

    ``(label, seed)`` is hashed with SHA-256 to seed a PCG64 generator, from
    which a standard-normal vector is drawn and L2-normalized.
    """
    if dim < 2:
        raise FormatError(f"pseudo_encode needs dim >= 2, got {dim}")
    digest = hashlib.sha256(f"{int(seed)}\x00{label}".encode("utf-8")).digest()
    rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:16], "little")))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def pseudo_encode_set(labels, dim: int, seed: int = 0) -> EmbeddingSet:
    labels = list(labels)
    rows = np.stack([pseudo_encode(label, dim, seed) for label in labels]) if labels else np.zeros((0, dim))
    return EmbeddingSet(rows, labels)
