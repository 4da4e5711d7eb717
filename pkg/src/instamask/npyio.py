"""NPY v1.0 feature tensors and dataset manifests.

The interchange contract is deliberately narrow: NPY version 1.0, dtype
'<f4', C order, rank 3 (patch rows, patch cols, channels). Anything else is
a hard error, so every producer/consumer pair agrees bit for bit. Manifest
paths resolve relative to the manifest file; missing feature files only fail
when actually read.
"""

from __future__ import annotations

import ast
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    DuplicateImageId,
    InvalidFeatureMap,
    IoFailure,
    RankMismatch,
    SchemaError,
    Truncated,
    UnsupportedDtype,
    UnsupportedOrder,
)

MAGIC = b"\x93NUMPY"
VERSION = b"\x01\x00"
HEADER_ALIGN = 64  # magic + version + length + text must pad to this
PATCH_SIZE = 16


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Dense per-patch descriptor grid, shape (height_patches, width_patches, channels)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise InvalidFeatureMap(f"feature grid must be rank 3, got rank {data.ndim}")
        if any(s < 1 for s in data.shape):
            raise InvalidFeatureMap(f"zero-sized dimension in shape {data.shape}")
        if data.dtype != np.float32:
            raise InvalidFeatureMap(f"feature grid must be float32, got {data.dtype}")
        if not data.flags.c_contiguous:
            data = np.ascontiguousarray(data)
        object.__setattr__(self, "data", data)

    @property
    def height_patches(self) -> int:
        return self.data.shape[0]

    @property
    def width_patches(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def n_patches(self) -> int:
        return self.data.shape[0] * self.data.shape[1]

    def vectors(self) -> np.ndarray:
        """(n_patches, channels) view, patches in row-major grid order."""
        return self.data.reshape(self.n_patches, self.channels)

    def check_finite(self):
        if not np.isfinite(self.data).all():
            raise InvalidFeatureMap("feature grid contains NaN or Inf")

    def __eq__(self, other):
        return (
            isinstance(other, FeatureMap)
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )


def read_npy(path) -> FeatureMap:
    """Read a rank-3 float32 NPY v1.0 file into a FeatureMap."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(raw) < 10 or raw[:6] != MAGIC:
        raise BadMagic(f"{path}: missing NPY magic bytes")
    if raw[6:8] != VERSION:
        raise BadMagic(f"{path}: not an NPY v1.0 file (version bytes {raw[6:8].hex()})")
    header_len = int.from_bytes(raw[8:10], "little")
    if len(raw) < 10 + header_len:
        raise Truncated(f"{path}: header cut short")
    try:
        header = ast.literal_eval(raw[10 : 10 + header_len].decode("latin1").strip())
        descr = header["descr"]
        fortran = header["fortran_order"]
        shape = header["shape"]
    except Exception as exc:
        raise BadMagic(f"{path}: unparseable NPY header") from exc
    if descr != "<f4":
        raise UnsupportedDtype(f"{path}: dtype {descr!r}, expected '<f4'")
    if fortran:
        raise UnsupportedOrder(f"{path}: column-major storage not accepted")
    if not isinstance(shape, tuple) or len(shape) != 3:
        raise RankMismatch(f"{path}: shape {shape}, expected rank 3")
    if not all(isinstance(s, int) and s >= 0 for s in shape):
        raise RankMismatch(f"{path}: malformed shape {shape}")
    need = 4 * shape[0] * shape[1] * shape[2]
    payload = raw[10 + header_len :]
    if len(payload) < need:
        raise Truncated(f"{path}: payload holds {len(payload)} bytes, header promises {need}")
    data = np.frombuffer(payload[:need], dtype="<f4").reshape(shape).copy()
    fm = FeatureMap(data)
    fm.check_finite()
    return fm


def write_npy(fm: FeatureMap, path) -> None:
    """Write a FeatureMap as NPY v1.0; round-trips bit-for-bit via read_npy."""
    fm.check_finite()
    shape = tuple(int(s) for s in fm.data.shape)
    text = "{'descr': '<f4', 'fortran_order': False, 'shape': %s, }" % (shape,)
    # pad with spaces, newline-terminated, so the payload starts on a
    # HEADER_ALIGN boundary
    base = len(MAGIC) + len(VERSION) + 2
    total = base + len(text) + 1
    pad = (HEADER_ALIGN - total % HEADER_ALIGN) % HEADER_ALIGN
    header = text + " " * pad + "\n"
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(VERSION)
            fh.write(len(header).to_bytes(2, "little"))
            fh.write(header.encode("latin1"))
            fh.write(np.ascontiguousarray(fm.data, dtype="<f4").tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


@dataclass(frozen=True)
class ManifestEntry:
    image_id: int
    width: int
    height: int
    feature_path: Path
    saliency_feature_path: Path | None


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]

    def by_id(self) -> dict[int, ManifestEntry]:
        return {e.image_id: e for e in self.entries}

    def image_ids(self) -> list[int]:
        return [e.image_id for e in self.entries]


def _require(cond, msg):
    if not cond:
        raise SchemaError(msg)


def load_manifest(path) -> DatasetManifest:
    """Load and validate a JSON manifest; paths resolve against its directory."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON: {exc}") from exc
    _require(isinstance(doc, dict) and isinstance(doc.get("entries"), list),
             f"{path}: manifest must be an object with an 'entries' list")
    base = path.parent
    entries = []
    seen = set()
    for i, rec in enumerate(doc["entries"]):
        _require(isinstance(rec, dict), f"{path}: entry {i} is not an object")
        for key in ("image_id", "width", "height", "features"):
            _require(key in rec, f"{path}: entry {i} missing field {key!r}")
        image_id = rec["image_id"]
        width = rec["width"]
        height = rec["height"]
        _require(isinstance(image_id, int), f"{path}: entry {i}: image_id must be an integer")
        _require(
            isinstance(width, int) and isinstance(height, int),
            f"{path}: entry {i}: width/height must be integers",
        )
        _require(
            width >= PATCH_SIZE and height >= PATCH_SIZE,
            f"{path}: entry {i}: image smaller than one patch ({width}x{height})",
        )
        _require(isinstance(rec["features"], str), f"{path}: entry {i}: features must be a path string")
        if image_id in seen:
            raise DuplicateImageId(f"{path}: image_id {image_id} appears more than once")
        seen.add(image_id)
        sal = rec.get("saliency_features")
        _require(sal is None or isinstance(sal, str),
                 f"{path}: entry {i}: saliency_features must be a path string or null")
        entries.append(
            ManifestEntry(
                image_id=image_id,
                width=width,
                height=height,
                feature_path=base / rec["features"],
                saliency_feature_path=(base / sal) if sal else None,
            )
        )
    return DatasetManifest(tuple(entries))
