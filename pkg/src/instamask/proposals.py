"""Mask-proposal pipeline: accumulate cluster masks over several k, split
non-connected components, score by intra-mask affinity coherence, filter by
a 2-way-clustering saliency map, deduplicate with mask NMS, and lift to
image resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatch, EmptyMask, GridMismatch
from .masks import BitMask, intersection_area, mask_iou, resize_nearest
from .npyio import FeatureMap
from .spectral import cosine_affinity, spectral_cluster

ANALYSIS_K_SET = (2, 3, 4, 5, 6)
PROPOSAL_K_SET = (2, 3, 4, 5)

_CONNECT_STRUCTS = {
    4: np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool),
    8: np.ones((3, 3), dtype=bool),
}


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs of the proposal pipeline.

    nms_iou=None disables suppression entirely (the analysis protocol);
    saliency_enabled=False skips the foreground filter.
    """

    k_set: tuple[int, ...] = PROPOSAL_K_SET
    saliency_threshold: float = 0.5
    nms_iou: float | None = 0.8
    connectivity: int = 4
    nccs_enabled: bool = True
    saliency_enabled: bool = True
    seed: int = 0
    patch_size: int = 16

    def __post_init__(self):
        ks = tuple(sorted(int(k) for k in self.k_set))
        if not ks or len(set(ks)) != len(ks) or ks[0] < 2:
            raise ValueError(f"k_set must be distinct integers >= 2, got {self.k_set}")
        object.__setattr__(self, "k_set", ks)
        if not 0.0 < self.saliency_threshold <= 1.0:
            raise ValueError(f"saliency_threshold {self.saliency_threshold} outside (0, 1]")
        if self.nms_iou is not None and not 0.0 < self.nms_iou <= 1.0:
            raise ValueError(f"nms_iou {self.nms_iou} outside (0, 1]")
        if self.connectivity not in (4, 8):
            raise ValueError(f"connectivity must be 4 or 8, got {self.connectivity}")
        if self.patch_size < 1:
            raise ValueError("patch_size must be positive")


def config_for_mode(mode: str, **overrides) -> PipelineConfig:
    """Defaults for the two protocols: 'analysis' accumulates everything
    (K={2..6}, no saliency, no NMS), 'proposal' is the filtered pipeline
    (K={2..5}, saliency 0.5, NMS 0.8)."""
    if mode == "analysis":
        base = dict(k_set=ANALYSIS_K_SET, saliency_enabled=False, nms_iou=None)
    elif mode == "proposal":
        base = dict(k_set=PROPOSAL_K_SET, saliency_enabled=True,
                    saliency_threshold=0.5, nms_iou=0.8)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    base.update(overrides)
    return PipelineConfig(**base)


@dataclass(frozen=True)
class MaskProposal:
    mask: BitMask
    source_k: int
    score: float


def multi_k_masks(
    fm: FeatureMap, cfg: PipelineConfig, affinity: np.ndarray | None = None
) -> list[tuple[BitMask, int]]:
    """One clustering pass per k in cfg.k_set; every cluster becomes a mask.

    Output is ordered by (ascending k, ascending cluster id), so each per-k
    slice partitions the patch grid and the total count is sum(k_set).
    """
    w = cosine_affinity(fm) if affinity is None else affinity
    h, wd = fm.height_patches, fm.width_patches
    out = []
    for k in cfg.k_set:
        labels = spectral_cluster(w, k, seed=cfg.seed).reshape(h, wd)
        for cid in range(k):
            out.append((BitMask.from_array(labels == cid), k))
    return out


def split_ncc(mask: BitMask, connectivity: int = 4) -> list[BitMask]:
    """Connected components of a mask, ordered by first set pixel
    (row-major); the outputs are disjoint and union back to the input."""
    if connectivity not in _CONNECT_STRUCTS:
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    arr = mask.to_array()
    if not arr.any():
        return []
    labelled, count = ndimage.label(arr, structure=_CONNECT_STRUCTS[connectivity])
    flat = labelled.ravel()
    first_seen = {}
    for pos in np.flatnonzero(flat):
        lab = flat[pos]
        if lab not in first_seen:
            first_seen[lab] = pos
            if len(first_seen) == count:
                break
    order = sorted(first_seen, key=first_seen.get)
    return [BitMask.from_array(labelled == lab) for lab in order]


def upsample_mask(
    patch_mask: BitMask, patch_size: int, image_width: int, image_height: int
) -> BitMask:
    """Nearest-neighbor expansion by patch_size, cropped to the image."""
    gh, gw = patch_mask.height, patch_mask.width
    if gh != math.ceil(image_height / patch_size) or gw != math.ceil(
        image_width / patch_size
    ):
        raise GridMismatch(
            f"grid {gh}x{gw} does not cover a {image_height}x{image_width} "
            f"image at patch size {patch_size}"
        )
    arr = patch_mask.to_array()
    big = np.repeat(np.repeat(arr, patch_size, axis=0), patch_size, axis=1)
    return BitMask.from_array(big[:image_height, :image_width])


def saliency_map(fm_saliency: FeatureMap, cfg: PipelineConfig) -> BitMask:
    """Foreground estimate: 2-way spectral clustering, then keep the cluster
    with the strictly smaller boundary-ring footprint (ties: smaller area,
    then lower cluster id)."""
    h, w = fm_saliency.height_patches, fm_saliency.width_patches
    labels = spectral_cluster(cosine_affinity(fm_saliency), 2, seed=cfg.seed).reshape(h, w)
    ring = np.zeros((h, w), dtype=bool)
    ring[0, :] = ring[-1, :] = True
    ring[:, 0] = ring[:, -1] = True
    candidates = []
    for cid in (0, 1):
        member = labels == cid
        candidates.append((int((member & ring).sum()), int(member.sum()), cid, member))
    _, _, _, fg = min(candidates, key=lambda t: t[:3])
    return BitMask.from_array(fg)


def filter_by_saliency(
    candidates: list[MaskProposal], saliency: BitMask, threshold: float
) -> list[MaskProposal]:
    """Keep candidates whose saliency coverage |m n s| / |m| reaches the
    threshold (inclusive); order is preserved."""
    kept = []
    for prop in candidates:
        if prop.mask.shape != saliency.shape:
            raise DimensionMismatch(
                f"candidate {prop.mask.shape} vs saliency {saliency.shape}"
            )
        area = prop.mask.area
        if area and intersection_area(prop.mask, saliency) / area >= threshold:
            kept.append(prop)
    return kept


def score_mask(mask: BitMask, w: np.ndarray) -> float:
    """Coherence: mean affinity over ordered pairs of distinct member
    patches; singletons score 1.0."""
    idx = np.flatnonzero(mask.to_array().ravel())
    if idx.size == 0:
        raise EmptyMask("cannot score an empty mask")
    if idx.size == 1:
        return 1.0
    sub = w[np.ix_(idx, idx)]
    m = idx.size
    return float((sub.sum() - np.trace(sub)) / (m * (m - 1)))


def mask_nms(proposals: list[MaskProposal], iou_threshold: float) -> list[MaskProposal]:
    """Greedy suppression: score descending (ties: larger area, then earlier
    input index); keep a mask only if its IoU with every kept mask stays
    below the threshold. A threshold above 1 suppresses nothing."""
    order = sorted(
        range(len(proposals)),
        key=lambda i: (-proposals[i].score, -proposals[i].mask.area, i),
    )
    kept: list[int] = []
    for i in order:
        if all(
            mask_iou(proposals[i].mask, proposals[j].mask) < iou_threshold
            for j in kept
        ):
            kept.append(i)
    return [proposals[i] for i in kept]


def _to_image_resolution(
    mask: BitMask, patch_size: int, image_width: int, image_height: int
) -> BitMask:
    gh, gw = mask.height, mask.width
    if gh == math.ceil(image_height / patch_size) and gw == math.ceil(
        image_width / patch_size
    ):
        return upsample_mask(mask, patch_size, image_width, image_height)
    # grid belongs to a resized/cropped view of the image (exported
    # features): expand to that resolution, then rescale onto the original
    arr = mask.to_array()
    big = np.repeat(np.repeat(arr, patch_size, axis=0), patch_size, axis=1)
    return resize_nearest(BitMask.from_array(big), image_height, image_width)


def propose(
    fm: FeatureMap,
    fm_saliency: FeatureMap | None,
    image_width: int,
    image_height: int,
    cfg: PipelineConfig,
) -> list[MaskProposal]:
    """Full per-image pipeline; returns proposals at image resolution,
    strongest first. An empty list is a legal outcome."""
    w = cosine_affinity(fm)
    candidates = multi_k_masks(fm, cfg, affinity=w)
    if cfg.nccs_enabled:
        candidates = [
            (part, k)
            for mask, k in candidates
            for part in split_ncc(mask, cfg.connectivity)
        ]
    else:
        candidates = [(mask, k) for mask, k in candidates if not mask.is_empty()]
    scored = [MaskProposal(mask, k, score_mask(mask, w)) for mask, k in candidates]
    if cfg.saliency_enabled:
        if fm_saliency is None:
            raise ValueError("saliency filtering enabled but no saliency features given")
        sal = saliency_map(fm_saliency, cfg)
        if sal.shape != (fm.height_patches, fm.width_patches):
            sal = resize_nearest(sal, fm.height_patches, fm.width_patches)
        scored = filter_by_saliency(scored, sal, cfg.saliency_threshold)
    if cfg.nms_iou is not None:
        scored = mask_nms(scored, cfg.nms_iou)
    else:  # same ordering NMS would produce, with nothing suppressed
        scored = [
            scored[i]
            for i in sorted(
                range(len(scored)),
                key=lambda i: (-scored[i].score, -scored[i].mask.area, i),
            )
        ]
    return [
        replace(
            prop,
            mask=_to_image_resolution(
                prop.mask, cfg.patch_size, image_width, image_height
            ),
        )
        for prop in scored
    ]
