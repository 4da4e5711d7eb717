"""Class-agnostic instance-mask proposals from self-supervised patch
features, with stratified-recall and COCO-protocol evaluation."""

from .masks import (
    BitMask,
    GroundTruthInstance,
    GroundTruthSet,
    mask_iou,
    parse_annotations,
    polygon_rasterize,
    rle_decode,
    rle_encode,
)
from .metrics import (
    DetectionMetrics,
    StratifiedRecallReport,
    bucket_ground_truths,
    detection_metrics,
    greedy_match,
    stratified_recall,
)
from .npyio import DatasetManifest, FeatureMap, load_manifest, read_npy, write_npy
from .proposals import (
    MaskProposal,
    PipelineConfig,
    config_for_mode,
    filter_by_saliency,
    mask_nms,
    multi_k_masks,
    propose,
    saliency_map,
    score_mask,
    split_ncc,
    upsample_mask,
)
from .spectral import cosine_affinity, kmeans, spectral_cluster, sym_eigens

__version__ = "0.1.0"

__all__ = [
    "BitMask",
    "DatasetManifest",
    "DetectionMetrics",
    "FeatureMap",
    "GroundTruthInstance",
    "GroundTruthSet",
    "MaskProposal",
    "PipelineConfig",
    "StratifiedRecallReport",
    "bucket_ground_truths",
    "config_for_mode",
    "cosine_affinity",
    "detection_metrics",
    "filter_by_saliency",
    "greedy_match",
    "kmeans",
    "load_manifest",
    "mask_iou",
    "mask_nms",
    "multi_k_masks",
    "parse_annotations",
    "polygon_rasterize",
    "propose",
    "read_npy",
    "rle_decode",
    "rle_encode",
    "saliency_map",
    "score_mask",
    "spectral_cluster",
    "split_ncc",
    "stratified_recall",
    "sym_eigens",
    "upsample_mask",
    "write_npy",
]
