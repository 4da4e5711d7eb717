"""Binary masks and their codecs: COCO compressed RLE, polygon
rasterization, IoU, and COCO-style annotation ingestion.

Masks are kept bit-packed (one byte per eight pixels, row-major) so a whole
validation split of ground truths fits in memory; intersection/union run
directly on the packed bytes via a popcount table.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DegeneratePolygon,
    DimensionMismatch,
    EmptyMask,
    IoFailure,
    LengthMismatch,
    MalformedRle,
    SchemaError,
)
from .npyio import DatasetManifest

_POPCOUNT = np.unpackbits(np.arange(256, dtype=np.uint8)[:, None], axis=1).sum(1).astype(np.uint16)


@dataclass(frozen=True, eq=False)
class BitMask:
    """Packed binary mask of shape (height, width)."""

    height: int
    width: int
    packed: np.ndarray  # np.packbits of the row-major flattened pixels

    @classmethod
    def from_array(cls, arr) -> "BitMask":
        arr = np.asarray(arr)
        if arr.ndim != 2:
            raise ValueError(f"mask array must be 2-D, got shape {arr.shape}")
        return cls(int(arr.shape[0]), int(arr.shape[1]),
                   np.packbits(arr.astype(bool).ravel()))

    def to_array(self) -> np.ndarray:
        flat = np.unpackbits(self.packed, count=self.height * self.width)
        return flat.astype(bool).reshape(self.height, self.width)

    @property
    def area(self) -> int:
        return int(_POPCOUNT[self.packed].sum())

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def is_empty(self) -> bool:
        return not self.packed.any()

    def __eq__(self, other):
        return (
            isinstance(other, BitMask)
            and self.shape == other.shape
            and self.packed.tobytes() == other.packed.tobytes()
        )


def intersection_area(a: BitMask, b: BitMask) -> int:
    if a.shape != b.shape:
        raise DimensionMismatch(f"mask shapes {a.shape} vs {b.shape}")
    return int(_POPCOUNT[a.packed & b.packed].sum())


def mask_iou(a: BitMask, b: BitMask, b_is_crowd: bool = False) -> float:
    """|a n b| / |a u b|; against a crowd region the denominator is |a|,
    so covering a crowd never counts against the prediction. Two empty
    masks give 0."""
    if a.shape != b.shape:
        raise DimensionMismatch(f"mask shapes {a.shape} vs {b.shape}")
    inter = int(_POPCOUNT[a.packed & b.packed].sum())
    if b_is_crowd:
        denom = a.area
    else:
        denom = int(_POPCOUNT[a.packed | b.packed].sum())
    return inter / denom if denom else 0.0


# ---------------------------------------------------------------------------
# COCO compressed RLE
#
# Runs are counted in column-major order starting with the zero run. The
# count stream is packed 5 bits per character (low bits first) with 0x20 as
# the continuation flag, each 6-bit chunk offset by ASCII 48; counts from the
# fourth one on are deltas against the count two positions back.


def _column_major_counts(mask: BitMask) -> list[int]:
    flat = mask.to_array().ravel(order="F")
    n = flat.size
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [n]))
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts.insert(0, 0)
    return counts


def _encode_counts(counts: list[int]) -> str:
    out = []
    for i, count in enumerate(counts):
        x = int(count)
        if i > 2:
            x -= int(counts[i - 2])
        while True:
            chunk = x & 0x1F
            x >>= 5
            more = (x != -1) if (chunk & 0x10) else (x != 0)
            if more:
                chunk |= 0x20
            out.append(chr(chunk + 48))
            if not more:
                break
    return "".join(out)


def _decode_counts(s: str) -> list[int]:
    counts: list[int] = []
    p = 0
    n = len(s)
    while p < n:
        x = 0
        k = 0
        while True:
            chunk = ord(s[p]) - 48
            if chunk < 0 or chunk > 63:
                raise MalformedRle(f"character {s[p]!r} outside the RLE alphabet")
            x |= (chunk & 0x1F) << (5 * k)
            p += 1
            k += 1
            if not (chunk & 0x20):
                if chunk & 0x10:
                    x |= -1 << (5 * k)
                break
            if p >= n:
                raise MalformedRle("string ends inside a chunk sequence")
        if len(counts) > 2:
            x += counts[-2]
        if x < 0:
            raise MalformedRle(f"negative run count {x}")
        counts.append(x)
    return counts


def rle_encode(mask: BitMask) -> str:
    """Compress a mask to the COCO RLE string."""
    return _encode_counts(_column_major_counts(mask))


def rle_decode(s: str, height: int, width: int) -> BitMask:
    """Rebuild a mask from a COCO RLE string; counts must cover the area."""
    counts = _decode_counts(s)
    return _mask_from_counts(counts, height, width)


def _mask_from_counts(counts, height, width) -> BitMask:
    counts = [int(c) for c in counts]
    if any(c < 0 for c in counts):
        raise MalformedRle("negative run count")
    if sum(counts) != height * width:
        raise LengthMismatch(
            f"runs sum to {sum(counts)}, mask needs {height * width}"
        )
    values = np.repeat(np.arange(len(counts), dtype=np.uint8) & 1, counts)
    return BitMask.from_array(values.reshape((height, width), order="F"))


def to_rle_record(mask: BitMask) -> dict:
    """COCO-style segmentation record {size: [h, w], counts: string}."""
    return {"size": [mask.height, mask.width], "counts": rle_encode(mask)}


def from_rle_record(record: dict) -> BitMask:
    try:
        h, w = record["size"]
        counts = record["counts"]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"bad RLE record: {record!r}") from exc
    if isinstance(counts, str):
        return rle_decode(counts, int(h), int(w))
    return _mask_from_counts(counts, int(h), int(w))


# ---------------------------------------------------------------------------
# polygon rasterization: even-odd scanline fill sampled at pixel centers


def polygon_rasterize(polygons, height: int, width: int) -> BitMask:
    """Union of even-odd fills; each polygon is a point list [(x, y), ...]
    or a flat coordinate list [x0, y0, x1, y1, ...]."""
    out = np.zeros((height, width), dtype=bool)
    for poly in polygons:
        pts = np.asarray(poly, dtype=float).reshape(-1, 2)
        if pts.shape[0] < 3:
            raise DegeneratePolygon(f"polygon with {pts.shape[0]} vertices")
        _fill_even_odd(pts, out)
    return BitMask.from_array(out)


def _fill_even_odd(pts: np.ndarray, out: np.ndarray) -> None:
    height, width = out.shape
    x1 = pts[:, 0]
    y1 = pts[:, 1]
    x2 = np.roll(x1, -1)
    y2 = np.roll(y1, -1)
    ymin = max(int(np.floor(pts[:, 1].min() - 0.5)), 0)
    ymax = min(int(np.ceil(pts[:, 1].max() + 0.5)), height)
    for row in range(ymin, ymax):
        yc = row + 0.5
        # half-open rule on y so shared vertices are counted exactly once
        hit = ((y1 <= yc) & (y2 > yc)) | ((y2 <= yc) & (y1 > yc))
        if not hit.any():
            continue
        xs = x1[hit] + (yc - y1[hit]) * (x2[hit] - x1[hit]) / (y2[hit] - y1[hit])
        xs.sort()
        for i in range(0, len(xs) - 1, 2):
            lo, hi = xs[i], xs[i + 1]
            # pixel centers c + 0.5 with lo <= c + 0.5 < hi
            start = max(int(np.ceil(lo - 0.5)), 0)
            stop = min(int(np.ceil(hi - 0.5)), width)
            if stop > start:
                out[row, start:stop] = True


# ---------------------------------------------------------------------------
# ground-truth ingestion (COCO instance-annotation schema subset)


@dataclass(frozen=True)
class GroundTruthInstance:
    instance_id: int
    category_id: int
    mask: BitMask
    is_crowd: bool
    area: float


@dataclass
class GroundTruthSet:
    by_image: dict[int, list[GroundTruthInstance]]
    skipped_unknown_images: int = 0

    def total_instances(self) -> int:
        return sum(len(v) for v in self.by_image.values())


def parse_annotations(document: dict, manifest: DatasetManifest) -> GroundTruthSet:
    """Decode a COCO-style annotation document against a manifest.

    Any annotation referencing an image id missing from the manifest is
    skipped and counted, not fatal. Masks land at manifest resolution;
    disagreement between the document's image sizes and the manifest is a
    schema error.
    """
    if not isinstance(document, dict):
        raise SchemaError("annotation document must be a JSON object")
    entries = manifest.by_id()
    doc_images = document.get("images", [])
    if not isinstance(doc_images, list):
        raise SchemaError("'images' must be a list")
    for img in doc_images:
        try:
            img_id = img["id"]
        except (TypeError, KeyError) as exc:
            raise SchemaError(f"image record without id: {img!r}") from exc
        entry = entries.get(img_id)
        if entry is None:
            continue
        if img.get("width", entry.width) != entry.width or img.get(
            "height", entry.height
        ) != entry.height:
            raise SchemaError(
                f"image {img_id}: document size {img.get('width')}x{img.get('height')} "
                f"disagrees with manifest {entry.width}x{entry.height}"
            )
    anns = document.get("annotations", [])
    if not isinstance(anns, list):
        raise SchemaError("'annotations' must be a list")
    by_image: dict[int, list[GroundTruthInstance]] = {e.image_id: [] for e in manifest.entries}
    seen_ids: dict[int, set] = {e.image_id: set() for e in manifest.entries}
    skipped = 0
    for ann in anns:
        if not isinstance(ann, dict):
            raise SchemaError(f"annotation is not an object: {ann!r}")
        for key in ("id", "image_id", "category_id", "segmentation"):
            if key not in ann:
                raise SchemaError(f"annotation missing field {key!r}: {ann!r}")
        image_id = ann["image_id"]
        entry = entries.get(image_id)
        if entry is None:
            skipped += 1
            continue
        inst_id = ann["id"]
        if inst_id in seen_ids[image_id]:
            raise SchemaError(f"annotation id {inst_id} repeated for image {image_id}")
        seen_ids[image_id].add(inst_id)
        mask = _decode_segmentation(ann["segmentation"], entry.height, entry.width)
        area = float(ann["area"]) if "area" in ann else float(mask.area)
        by_image[image_id].append(
            GroundTruthInstance(
                instance_id=inst_id,
                category_id=int(ann["category_id"]),
                mask=mask,
                is_crowd=bool(ann.get("iscrowd", 0)),
                area=area,
            )
        )
    return GroundTruthSet(by_image=by_image, skipped_unknown_images=skipped)


def _decode_segmentation(seg, height: int, width: int) -> BitMask:
    if isinstance(seg, list):
        return polygon_rasterize(seg, height, width)
    if isinstance(seg, dict):
        mask = from_rle_record(seg)
        if mask.shape != (height, width):
            raise SchemaError(
                f"RLE sized {mask.shape} for a {height}x{width} image"
            )
        return mask
    raise SchemaError(f"unsupported segmentation payload: {type(seg).__name__}")


def load_annotations(path, manifest: DatasetManifest) -> GroundTruthSet:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON: {exc}") from exc
    return parse_annotations(doc, manifest)


def resize_nearest(mask: BitMask, height: int, width: int) -> BitMask:
    """Nearest-neighbor resample (target index i maps to floor(i*src/dst))."""
    arr = mask.to_array()
    rows = (np.arange(height) * arr.shape[0]) // height
    cols = (np.arange(width) * arr.shape[1]) // width
    return BitMask.from_array(arr[rows][:, cols])


def require_non_empty(mask: BitMask) -> BitMask:
    if mask.is_empty():
        raise EmptyMask("operation needs at least one set pixel")
    return mask
