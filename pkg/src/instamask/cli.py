"""Batch driver: `instamask propose|evaluate|visualize|saliency`.

Configuration comes from an optional JSON config file with command-line
flags layered on top; `--mode` picks the protocol defaults (analysis:
K={2..6}, no saliency, no NMS; proposal: K={2..5}, saliency 0.5, NMS 0.8).
Images are processed by a worker pool and results are written ordered by
image id, so output bytes are independent of scheduling.
"""

from __future__ import annotations

import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np

from . import masks as masklib
from . import metrics as metriclib
from .errors import InstamaskError, IoFailure
from .npyio import DatasetManifest, ManifestEntry, load_manifest, read_npy
from .proposals import PipelineConfig, config_for_mode, propose, saliency_map, upsample_mask
from .masks import resize_nearest

log = logging.getLogger("instamask")

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING,
               "info": logging.INFO, "debug": logging.DEBUG}

# per-image input problems worth skipping over in a batch run
_SKIPPABLE = (IoFailure, FileNotFoundError)


def _setup_logging():
    level = _LOG_LEVELS.get(os.environ.get("INSTAMASK_LOG", "info").lower(), logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    log.setLevel(level)


@dataclass(frozen=True)
class RunConfig:
    manifest_path: Path
    output_path: Path
    mode: str
    pipeline: PipelineConfig
    workers: int
    annotations_path: Path | None = None


_PIPELINE_KEYS = ("k_set", "saliency_threshold", "nms_iou", "connectivity",
                  "nccs_enabled", "saliency_enabled", "seed", "patch_size")


def _parse_k_set(text):
    try:
        return tuple(int(part) for part in str(text).replace(" ", "").split(",") if part)
    except ValueError as exc:
        raise click.BadParameter(f"bad k set {text!r}") from exc


def resolve_pipeline_config(mode, config_path=None, **flag_overrides) -> PipelineConfig:
    """mode defaults < config file < explicit flags."""
    overrides = {}
    if config_path is not None:
        doc = json.loads(Path(config_path).read_text())
        if not isinstance(doc, dict):
            raise click.ClickException(f"{config_path}: config must be a JSON object")
        for key in _PIPELINE_KEYS:
            if key in doc:
                overrides[key] = tuple(doc[key]) if key == "k_set" else doc[key]
    for key, value in flag_overrides.items():
        if value is not None:
            overrides[key] = value
    try:
        return config_for_mode(mode, **overrides)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc


def _pipeline_options(fn):
    decorators = [
        click.option("--mode", type=click.Choice(["analysis", "proposal"]),
                     default="proposal", show_default=True,
                     help="Protocol defaults: accumulate-everything analysis or the filtered proposal pipeline."),
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                     default=None, help="JSON config file; flags override it."),
        click.option("--k-set", "k_set", default=None,
                     help="Comma-separated cluster counts, e.g. 2,3,4,5."),
        click.option("--saliency-threshold", type=float, default=None,
                     help="Minimum fraction of a candidate covered by the saliency map."),
        click.option("--nms-iou", type=float, default=None,
                     help="IoU above which a lower-scored duplicate is dropped."),
        click.option("--no-saliency", is_flag=True, default=False,
                     help="Disable the saliency filter."),
        click.option("--no-nccs", is_flag=True, default=False,
                     help="Keep non-connected masks whole."),
        click.option("--connectivity", type=click.Choice(["4", "8"]), default=None,
                     help="Pixel adjacency for component splitting."),
        click.option("--seed", type=int, default=None, help="Seed for all stochastic steps."),
        click.option("--patch-size", type=int, default=None,
                     help="Pixels per patch of the feature grid."),
    ]
    for dec in reversed(decorators):
        fn = dec(fn)
    return fn


def _build_config(mode, config_path, k_set, saliency_threshold, nms_iou,
                  no_saliency, no_nccs, connectivity, seed, patch_size) -> PipelineConfig:
    return resolve_pipeline_config(
        mode,
        config_path=config_path,
        k_set=_parse_k_set(k_set) if k_set else None,
        saliency_threshold=saliency_threshold,
        nms_iou=nms_iou,
        saliency_enabled=False if no_saliency else None,
        nccs_enabled=False if no_nccs else None,
        connectivity=int(connectivity) if connectivity else None,
        seed=seed,
        patch_size=patch_size,
    )


@click.group()
def main():
    """Instance-mask proposals from self-supervised feature grids."""
    _setup_logging()


# ---------------------------------------------------------------------------
# propose


def _propose_one(args: tuple[ManifestEntry, PipelineConfig]):
    entry, cfg = args
    try:
        fm = read_npy(entry.feature_path)
        fm_sal = None
        if cfg.saliency_enabled:
            if entry.saliency_feature_path is None:
                raise IoFailure(f"image {entry.image_id}: no saliency features in manifest")
            fm_sal = (
                fm
                if entry.saliency_feature_path == entry.feature_path
                else read_npy(entry.saliency_feature_path)
            )
        props = propose(fm, fm_sal, entry.width, entry.height, cfg)
        records = [
            {
                "image_id": entry.image_id,
                "segmentation": masklib.to_rle_record(p.mask),
                "score": p.score,
            }
            for p in props
        ]
        return entry.image_id, records, None
    except _SKIPPABLE as exc:
        return entry.image_id, None, str(exc)


def _run_pool(worker, jobs, workers: int):
    if workers <= 1:
        return [worker(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(worker, jobs))


def run_propose(run: RunConfig) -> dict:
    manifest = load_manifest(run.manifest_path)
    start = time.monotonic()
    jobs = [(entry, run.pipeline) for entry in manifest.entries]
    results = _run_pool(_propose_one, jobs, run.workers)
    results.sort(key=lambda r: r[0])
    records = []
    skipped = 0
    for image_id, recs, err in results:
        if recs is None:
            skipped += 1
            log.warning("skipping image %d: %s", image_id, err)
            continue
        log.info("image %d: %d proposals", image_id, len(recs))
        records.extend(recs)
    records.sort(key=lambda r: (r["image_id"], -r["score"]))
    run.output_path.parent.mkdir(parents=True, exist_ok=True)
    run.output_path.write_text(json.dumps(records, indent=1))
    elapsed = time.monotonic() - start
    summary = {
        "images": len(manifest.entries),
        "skipped": skipped,
        "proposals": len(records),
        "seconds": round(elapsed, 3),
    }
    log.info(
        "proposed %d masks over %d images (%d skipped) in %.1fs",
        len(records), len(manifest.entries), skipped, elapsed,
    )
    return summary


@main.command("propose")
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "output_path", required=True, type=click.Path(dir_okay=False))
@click.option("--workers", type=int, default=1, show_default=True)
@_pipeline_options
def cmd_propose(manifest_path, output_path, workers, mode, **cfg_flags):
    """Generate mask proposals for every image in the manifest."""
    cfg = _build_config(mode, **cfg_flags)
    run = RunConfig(
        manifest_path=Path(manifest_path),
        output_path=Path(output_path),
        mode=mode,
        pipeline=cfg,
        workers=workers,
    )
    try:
        run_propose(run)
    except InstamaskError as exc:
        log.error("%s", exc)
        sys.exit(1)


# ---------------------------------------------------------------------------
# evaluate


def load_proposal_file(path, manifest: DatasetManifest):
    """Proposal records -> {image_id: [(mask, score)]}; ids missing from the
    manifest are dropped with a warning count."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise masklib.SchemaError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, list):
        raise masklib.SchemaError(f"{path}: proposal file must be a JSON list")
    known = set(manifest.image_ids())
    per_image: dict[int, list] = {image_id: [] for image_id in known}
    unknown = 0
    for rec in doc:
        try:
            image_id = rec["image_id"]
            seg = rec["segmentation"]
            score = float(rec["score"])
        except (TypeError, KeyError, ValueError) as exc:
            raise masklib.SchemaError(f"{path}: bad proposal record {rec!r}") from exc
        if image_id not in known:
            unknown += 1
            continue
        per_image[image_id].append((masklib.from_rle_record(seg), score))
    if unknown:
        log.warning("dropped %d proposals for images outside the manifest", unknown)
    return per_image


@main.command("evaluate")
@click.argument("proposal_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--annotations", "annotations_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "output_dir", required=True, type=click.Path(file_okay=False))
@click.option("--csv", "emit_csv", is_flag=True, default=False,
              help="Also write comma-separated report rows.")
def cmd_evaluate(proposal_file, manifest_path, annotations_path, output_dir, emit_csv):
    """Score a proposal file: stratified recall and class-agnostic AP/AR."""
    try:
        manifest = load_manifest(manifest_path)
        gts = masklib.load_annotations(annotations_path, manifest)
        proposals = load_proposal_file(proposal_file, manifest)
        recall_report = metriclib.stratified_recall(proposals, gts)
        det = metriclib.detection_metrics(proposals, gts)
    except InstamaskError as exc:
        log.error("%s", exc)
        sys.exit(1)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "stratified_recall.json").write_text(
        json.dumps(metriclib.recall_report_to_dict(recall_report), indent=1)
    )
    recall_table = metriclib.render_recall_table(recall_report)
    (out / "stratified_recall.txt").write_text(recall_table)
    (out / "detection_metrics.json").write_text(json.dumps(det.as_dict(), indent=1))
    det_table = metriclib.render_detection_table(det)
    (out / "detection_metrics.txt").write_text(det_table)
    if emit_csv:
        (out / "stratified_recall.csv").write_text(
            metriclib.recall_report_to_csv(recall_report)
        )
        (out / "detection_metrics.csv").write_text(
            metriclib.detection_metrics_to_csv(det)
        )
    click.echo(recall_table)
    click.echo(det_table)
    if gts.skipped_unknown_images:
        log.warning("%d annotations referenced unknown images", gts.skipped_unknown_images)


# ---------------------------------------------------------------------------
# saliency (debug dump)


def _saliency_one(args: tuple[ManifestEntry, PipelineConfig]):
    entry, cfg = args
    try:
        path = entry.saliency_feature_path or entry.feature_path
        fm = read_npy(path)
        sal = saliency_map(fm, cfg)
        if sal.height == math.ceil(entry.height / cfg.patch_size) and sal.width == math.ceil(
            entry.width / cfg.patch_size
        ):
            sal_px = upsample_mask(sal, cfg.patch_size, entry.width, entry.height)
        else:
            big = masklib.BitMask.from_array(
                sal.to_array().repeat(cfg.patch_size, 0).repeat(cfg.patch_size, 1)
            )
            sal_px = resize_nearest(big, entry.height, entry.width)
        return entry.image_id, {
            "image_id": entry.image_id,
            "segmentation": masklib.to_rle_record(sal_px),
        }, None
    except _SKIPPABLE as exc:
        return entry.image_id, None, str(exc)


@main.command("saliency")
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "output_path", required=True, type=click.Path(dir_okay=False))
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--patch-size", type=int, default=None)
def cmd_saliency(manifest_path, output_path, workers, seed, patch_size):
    """Dump per-image saliency masks as RLE records (debugging aid)."""
    cfg = resolve_pipeline_config("proposal", seed=seed, patch_size=patch_size)
    manifest = load_manifest(manifest_path)
    jobs = [(entry, cfg) for entry in manifest.entries]
    results = _run_pool(_saliency_one, jobs, workers)
    results.sort(key=lambda r: r[0])
    records = []
    skipped = 0
    for image_id, rec, err in results:
        if rec is None:
            skipped += 1
            log.warning("skipping image %d: %s", image_id, err)
        else:
            records.append(rec)
    Path(output_path).parent.mkdir(parents=True, exist_ok=True)
    Path(output_path).write_text(json.dumps(records, indent=1))
    log.info("wrote %d saliency masks (%d skipped)", len(records), skipped)


# ---------------------------------------------------------------------------
# visualize


_PALETTE = (
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
    (210, 245, 60), (170, 110, 40),
)


def _find_image(image_dir: Path, image_id: int) -> Path | None:
    for pattern in (f"{image_id}.*", f"{image_id:012d}.*"):
        hits = sorted(image_dir.glob(pattern))
        if hits:
            return hits[0]
    return None


def render_overlay(image, proposals_for_image, alpha=0.5):
    """Alpha-blend each mask in palette order (proposal rank picks the
    color); returns a new RGB array."""
    out = np.asarray(image, dtype=np.float64).copy()
    for rank, (mask, _score) in enumerate(proposals_for_image):
        color = np.array(_PALETTE[rank % len(_PALETTE)], dtype=np.float64)
        region = mask.to_array()
        out[region] = (1.0 - alpha) * out[region] + alpha * color
    return out.round().astype("uint8")


@main.command("visualize")
@click.argument("proposal_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--images", "image_dir", required=True, type=click.Path(file_okay=False, exists=True))
@click.option("--out", "output_dir", required=True, type=click.Path(file_okay=False))
@click.option("--limit", type=int, default=None, help="Render at most this many images.")
def cmd_visualize(proposal_file, image_dir, output_dir, limit):
    """Render proposal overlays, one PNG per image."""
    from PIL import Image, UnidentifiedImageError

    doc = json.loads(Path(proposal_file).read_text())
    per_image: dict[int, list] = {}
    for rec in doc:
        seg = rec["segmentation"]
        per_image.setdefault(rec["image_id"], []).append(
            (masklib.from_rle_record(seg), float(rec["score"]))
        )
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    image_dir = Path(image_dir)
    skipped = 0
    rendered = 0
    for image_id in sorted(per_image):
        if limit is not None and rendered >= limit:
            break
        src = _find_image(image_dir, image_id)
        if src is None:
            skipped += 1
            log.warning("no image file for id %d", image_id)
            continue
        try:
            img = Image.open(src).convert("RGB")
        except (OSError, UnidentifiedImageError) as exc:
            skipped += 1
            log.warning("cannot decode %s: %s", src, exc)
            continue
        ranked = sorted(per_image[image_id], key=lambda p: -p[1])
        overlay = render_overlay(img, ranked)
        Image.fromarray(overlay).save(out / f"{image_id}.png")
        rendered += 1
    log.info("rendered %d overlays (%d skipped)", rendered, skipped)


if __name__ == "__main__":
    main()
