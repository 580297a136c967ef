"""Binary artifact formats and the dataset manifest.

All multi-byte integers are 4-byte little-endian unsigned; all float
payloads are little-endian 32-bit, row-major.  Layouts:

* anchors   ``TDLA``: magic, version, K, d, 1-byte orthogonalized flag,
  length-prefixed UTF-8 JSON array of class names, then K*d floats.
* CAM       ``TDLM``: magic, version, H, W, then H*W floats.
* features  ``TDLF``: magic, version, H, W, D, then H*W*D floats.
* checkpoint ``TDLC``: magic, version, length-prefixed UTF-8 JSON header
  (names/shapes of the arrays plus scalar state), then the arrays
  concatenated in header order.

Manifest: JSON-lines, one record per image with keys
``id, label, features_path, cam_path, gt_box, split`` (paths relative to
the manifest's directory).

Writes go through a temp file and ``os.replace`` so readers never observe
a partial artifact.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from .anchors import AnchorSet
from .errors import FormatError, InvalidManifest

ANCHOR_MAGIC = b"TDLA"
CAM_MAGIC = b"TDLM"
FEATURES_MAGIC = b"TDLF"
CHECKPOINT_MAGIC = b"TDLC"
FORMAT_VERSION = 1

_U32 = struct.Struct("<I")


def _write_atomic(path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def _read_u32(buf: bytes, offset: int) -> tuple[int, int]:
    if offset + 4 > len(buf):
        raise FormatError("truncated file")
    return _U32.unpack_from(buf, offset)[0], offset + 4


def _check_magic(buf: bytes, magic: bytes, path) -> int:
    if buf[:4] != magic:
        raise FormatError(f"{path}: bad magic {buf[:4]!r}, expected {magic!r}")
    version, offset = _read_u32(buf, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    return offset


def save_anchors(path, anchors: AnchorSet) -> None:
    names_blob = json.dumps(list(anchors.class_names)).encode("utf-8")
    parts = [
        ANCHOR_MAGIC,
        _U32.pack(FORMAT_VERSION),
        _U32.pack(anchors.num_classes),
        _U32.pack(anchors.dim),
        bytes([1 if anchors.orthogonalized else 0]),
        _U32.pack(len(names_blob)),
        names_blob,
        np.ascontiguousarray(anchors.anchors, dtype="<f4").tobytes(),
    ]
    _write_atomic(path, b"".join(parts))


def load_anchors(path, normalize_rows: bool = True) -> AnchorSet:
    buf = Path(path).read_bytes()
    offset = _check_magic(buf, ANCHOR_MAGIC, path)
    k, offset = _read_u32(buf, offset)
    d, offset = _read_u32(buf, offset)
    if offset >= len(buf):
        raise FormatError(f"{path}: truncated file")
    orthogonalized = bool(buf[offset])
    offset += 1
    names_len, offset = _read_u32(buf, offset)
    names = json.loads(buf[offset : offset + names_len].decode("utf-8"))
    offset += names_len
    expected = k * d * 4
    if len(buf) - offset != expected:
        raise FormatError(f"{path}: payload {len(buf) - offset} bytes, expected {expected}")
    rows = np.frombuffer(buf, dtype="<f4", count=k * d, offset=offset)
    rows = rows.astype(np.float64).reshape(k, d)
    return AnchorSet.from_rows(
        rows, names, orthogonalized=orthogonalized, normalize_rows=normalize_rows
    )


def _save_grid(path, magic: bytes, arr: np.ndarray) -> None:
    dims = b"".join(_U32.pack(n) for n in arr.shape)
    payload = magic + _U32.pack(FORMAT_VERSION) + dims
    payload += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    _write_atomic(path, payload)


def _load_grid(path, magic: bytes, ndim: int) -> np.ndarray:
    buf = Path(path).read_bytes()
    offset = _check_magic(buf, magic, path)
    shape = []
    for _ in range(ndim):
        n, offset = _read_u32(buf, offset)
        shape.append(n)
    count = int(np.prod(shape))
    if len(buf) - offset != count * 4:
        raise FormatError(f"{path}: payload {len(buf) - offset} bytes, expected {count * 4}")
    arr = np.frombuffer(buf, dtype="<f4", count=count, offset=offset)
    return arr.astype(np.float64).reshape(shape)


def save_cam(path, values: np.ndarray) -> None:
    values = np.asarray(values)
    if values.ndim != 2:
        raise FormatError(f"CAM must be 2-D, got shape {values.shape}")
    _save_grid(path, CAM_MAGIC, values)


def load_cam(path) -> np.ndarray:
    return _load_grid(path, CAM_MAGIC, 2)


def cam_shape(path) -> tuple[int, int]:
    """Read (H, W) from a CAM header without loading the payload."""
    with open(path, "rb") as fh:
        head = fh.read(16)
    _check_magic(head, CAM_MAGIC, path)
    h, off = _read_u32(head, 8)
    w, _ = _read_u32(head, off)
    return h, w


def save_features(path, grid: np.ndarray) -> None:
    grid = np.asarray(grid)
    if grid.ndim != 3:
        raise FormatError(f"feature grid must be 3-D, got shape {grid.shape}")
    _save_grid(path, FEATURES_MAGIC, grid)


def load_features(path) -> np.ndarray:
    return _load_grid(path, FEATURES_MAGIC, 3)


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Versioned container: JSON header + named float32 arrays."""
    order = list(arrays)
    header = dict(meta)
    header["arrays"] = [
        {"name": name, "shape": list(np.asarray(arrays[name]).shape)} for name in order
    ]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, _U32.pack(FORMAT_VERSION), _U32.pack(len(blob)), blob]
    for name in order:
        parts.append(np.ascontiguousarray(arrays[name], dtype="<f4").tobytes())
    _write_atomic(path, b"".join(parts))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    buf = Path(path).read_bytes()
    offset = _check_magic(buf, CHECKPOINT_MAGIC, path)
    blob_len, offset = _read_u32(buf, offset)
    header = json.loads(buf[offset : offset + blob_len].decode("utf-8"))
    offset += blob_len
    arrays = {}
    for spec in header.pop("arrays"):
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(buf, dtype="<f4", count=count, offset=offset)
        arrays[spec["name"]] = arr.reshape(shape).copy()
        offset += count * 4
    if offset != len(buf):
        raise FormatError(f"{path}: {len(buf) - offset} trailing bytes")
    return arrays, header


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


MANIFEST_KEYS = ("id", "label", "features_path", "cam_path", "gt_box", "split")


def save_manifest(path, records: list[dict]) -> None:
    lines = [json.dumps(rec, sort_keys=True) for rec in records]
    _write_atomic(path, ("\n".join(lines) + "\n").encode("utf-8"))


def load_manifest(path) -> list[dict]:
    path = Path(path)
    try:
        text = path.read_text("utf-8")
    except OSError as exc:
        raise InvalidManifest(f"cannot read manifest {path}: {exc}") from exc
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InvalidManifest(f"{path}:{lineno}: bad JSON: {exc}") from exc
        missing = [k for k in MANIFEST_KEYS if k not in rec]
        if missing:
            raise InvalidManifest(f"{path}:{lineno}: missing keys {missing}")
        records.append(rec)
    if not records:
        raise InvalidManifest(f"{path}: no records")
    return records


def manifest_paths(manifest_path, record: dict) -> tuple[Path, Path]:
    """Resolve a record's features/cam paths relative to the manifest."""
    root = Path(manifest_path).parent
    return root / record["features_path"], root / record["cam_path"]
