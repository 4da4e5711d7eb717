import json

import numpy as np
import pytest

import synth
from instamask import BitMask, FeatureMap, write_npy


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def write_blob_dataset(root, n_images=3, seed=0):
    """On-disk dataset of two-blob scenes: NPY features, manifest, COCO-style
    annotations whose ground truths are the planted blobs (pixel resolution).

    Annotation RLE strings are produced by the reference codec in
    tests/oracles.py, not by the package.
    """
    import oracles

    root.mkdir(parents=True, exist_ok=True)
    (root / "feats").mkdir(exist_ok=True)
    entries = []
    images = []
    annotations = []
    ann_id = 1
    for i in range(n_images):
        image_id = 10 + i
        scene = synth.two_blob_scene()
        feat_path = root / "feats" / f"{image_id}.npy"
        sal_path = root / "feats" / f"{image_id}_sal.npy"
        write_npy(FeatureMap(scene["features"]), feat_path)
        write_npy(FeatureMap(scene["saliency_features"]), sal_path)
        entries.append(
            {
                "image_id": image_id,
                "width": scene["image_width"],
                "height": scene["image_height"],
                "features": f"feats/{image_id}.npy",
                "saliency_features": f"feats/{image_id}_sal.npy",
            }
        )
        images.append(
            {"id": image_id, "width": scene["image_width"], "height": scene["image_height"]}
        )
        for blob in ("blob_a", "blob_b"):
            px = np.repeat(np.repeat(scene[blob], 16, axis=0), 16, axis=1)
            counts = oracles.rle_counts_from_mask(px)
            annotations.append(
                {
                    "id": ann_id,
                    "image_id": image_id,
                    "category_id": 1,
                    "segmentation": {
                        "size": [px.shape[0], px.shape[1]],
                        "counts": oracles.rle_string_from_counts(counts),
                    },
                    "iscrowd": 0,
                    "area": float(px.sum()),
                }
            )
            ann_id += 1
    manifest_path = root / "manifest.json"
    manifest_path.write_text(json.dumps({"entries": entries}, indent=1))
    ann_path = root / "annotations.json"
    ann_path.write_text(
        json.dumps(
            {"images": images, "annotations": annotations, "categories": [{"id": 1}]},
            indent=1,
        )
    )
    return manifest_path, ann_path


def planted_blob_masks(scene):
    """Pixel-resolution BitMasks of the planted blobs."""
    out = {}
    for blob in ("blob_a", "blob_b"):
        px = np.repeat(np.repeat(scene[blob], 16, axis=0), 16, axis=1)
        out[blob] = BitMask.from_array(px)
    return out
