"""Evaluation protocols: instance-count-stratified mean average recall, and
class-agnostic COCO-style AP/AR with size-stratified variants.

Matching follows the COCO convention: predictions in score order greedily
take the unmatched non-crowd ground truth with the highest IoU above the
threshold; crowd regions absorb leftover predictions without counting.
Stratified recall micro-averages over instances within each co-occurrence
bucket and averages over the IoU ladder 0.50:0.05:0.95.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .masks import BitMask, GroundTruthInstance, GroundTruthSet, mask_iou

IOU_THRESHOLDS: tuple[float, ...] = tuple(np.linspace(0.50, 0.95, 10).round(10).tolist())
RECALL_POINTS = np.linspace(0.0, 1.0, 101)
MAX_BUCKET = 6  # instance-count buckets 1..5 and "6+"
AREA_RANGES = {
    "all": (0.0, float("inf")),
    "small": (0.0, 32.0 ** 2),
    "medium": (32.0 ** 2, 96.0 ** 2),
    "large": (96.0 ** 2, float("inf")),
}

ScoredMask = tuple[BitMask, float]


def bucket_ground_truths(gts: GroundTruthSet) -> dict[tuple[int, int], int]:
    """Map (image_id, instance_id) to its co-occurrence bucket: the number
    of same-category non-crowd instances in that image, capped at 6 ("6+").
    Crowd instances get no bucket."""
    out: dict[tuple[int, int], int] = {}
    for image_id, instances in gts.by_image.items():
        per_cat: dict[int, list[GroundTruthInstance]] = {}
        for inst in instances:
            if inst.is_crowd:
                continue
            per_cat.setdefault(inst.category_id, []).append(inst)
        for group in per_cat.values():
            bucket = min(len(group), MAX_BUCKET)
            for inst in group:
                out[(image_id, inst.instance_id)] = bucket
    return out


def greedy_match(
    preds: Sequence[ScoredMask],
    gts: Sequence[GroundTruthInstance],
    iou_threshold: float,
) -> tuple[list[int | None], list[bool]]:
    """Match score-sorted predictions against one image's instances.

    Returns, per prediction, the matched instance_id (or None) and whether
    an unmatched prediction was absorbed by a crowd region. Non-crowd
    instances match at most once; ties on IoU go to the lower instance_id.
    """
    real = sorted(
        (g for g in gts if not g.is_crowd), key=lambda g: g.instance_id
    )
    crowd = [g for g in gts if g.is_crowd]
    taken: set[int] = set()
    matches: list[int | None] = []
    absorbed: list[bool] = []
    for mask, _score in preds:
        best_id = None
        best_iou = 0.0
        for g in real:
            if g.instance_id in taken:
                continue
            iou = mask_iou(mask, g.mask)
            if iou >= iou_threshold and iou > best_iou:
                best_id, best_iou = g.instance_id, iou
        if best_id is not None:
            taken.add(best_id)
            matches.append(best_id)
            absorbed.append(False)
            continue
        matches.append(None)
        absorbed.append(
            any(mask_iou(mask, g.mask, b_is_crowd=True) >= iou_threshold for g in crowd)
        )
    return matches, absorbed


@dataclass(frozen=True)
class BucketRecall:
    mean_average_recall: float
    gt_count: int


@dataclass(frozen=True)
class StratifiedRecallReport:
    buckets: dict[int, BucketRecall]
    iou_thresholds: tuple[float, ...]
    max_dets: int | None


def _sorted_preds(preds: Sequence[ScoredMask], max_dets: int | None) -> list[ScoredMask]:
    ordered = sorted(range(len(preds)), key=lambda i: (-preds[i][1], i))
    if max_dets is not None:
        ordered = ordered[:max_dets]
    return [preds[i] for i in ordered]


def stratified_recall(
    proposals: Mapping[int, Sequence[ScoredMask]],
    gts: GroundTruthSet,
    iou_thresholds: Sequence[float] = IOU_THRESHOLDS,
    max_dets: int | None = None,
) -> StratifiedRecallReport:
    """Recall per instance-count bucket, micro-averaged over instances and
    averaged over the IoU ladder. max_dets=None means unlimited."""
    bucket_of = bucket_ground_truths(gts)
    totals = {b: 0 for b in range(1, MAX_BUCKET + 1)}
    for bucket in bucket_of.values():
        totals[bucket] += 1
    recalled = {b: 0 for b in range(1, MAX_BUCKET + 1)}
    for image_id, instances in gts.by_image.items():
        if not instances:
            continue
        preds = _sorted_preds(proposals.get(image_id, []), max_dets)
        if not preds:
            continue
        # one IoU table per image, shared across thresholds
        real = sorted((g for g in gts.by_image[image_id] if not g.is_crowd),
                      key=lambda g: g.instance_id)
        iou_table = np.array(
            [[mask_iou(mask, g.mask) for g in real] for mask, _ in preds]
        ) if real else np.zeros((len(preds), 0))
        for threshold in iou_thresholds:
            taken = np.zeros(len(real), dtype=bool)
            for row in iou_table:
                best = -1
                best_iou = 0.0
                for gi in range(len(real)):
                    if taken[gi]:
                        continue
                    if row[gi] >= threshold and row[gi] > best_iou:
                        best, best_iou = gi, row[gi]
                if best >= 0:
                    taken[best] = True
                    key = (image_id, real[best].instance_id)
                    recalled[bucket_of[key]] += 1
    n_thr = len(iou_thresholds)
    buckets = {
        b: BucketRecall(
            mean_average_recall=(recalled[b] / (totals[b] * n_thr)) if totals[b] else 0.0,
            gt_count=totals[b],
        )
        for b in range(1, MAX_BUCKET + 1)
    }
    return StratifiedRecallReport(
        buckets=buckets,
        iou_thresholds=tuple(iou_thresholds),
        max_dets=max_dets,
    )


@dataclass(frozen=True)
class DetectionMetrics:
    ap50: float
    ap75: float
    ap: float
    ar1: float
    ar10: float
    ar100: float
    ap_s: float
    ap_m: float
    ap_l: float
    ar_s: float
    ar_m: float
    ar_l: float

    def as_dict(self) -> dict[str, float]:
        return {
            "ap50": self.ap50, "ap75": self.ap75, "ap": self.ap,
            "ar1": self.ar1, "ar10": self.ar10, "ar100": self.ar100,
            "ap_s": self.ap_s, "ap_m": self.ap_m, "ap_l": self.ap_l,
            "ar_s": self.ar_s, "ar_m": self.ar_m, "ar_l": self.ar_l,
        }


@dataclass
class _ImageEval:
    scores: np.ndarray          # (D,)
    dt_matched: np.ndarray      # (T, D) bool
    dt_ignored: np.ndarray      # (T, D) bool
    n_real_gt: int


def _area_ignored(area: float, rng: tuple[float, float]) -> bool:
    return not (rng[0] <= area < rng[1])


def _evaluate_image(
    preds: list[ScoredMask],
    gts: Sequence[GroundTruthInstance],
    area_rng: tuple[float, float],
    max_det: int,
) -> _ImageEval | None:
    if not preds and not gts:
        return None
    preds = preds[:max_det]
    gt_ignore = np.array(
        [g.is_crowd or _area_ignored(g.area, area_rng) for g in gts], dtype=bool
    )
    is_crowd = np.array([g.is_crowd for g in gts], dtype=bool)
    # IoU uses the crowd rule against crowd regions
    iou = np.array(
        [[mask_iou(mask, g.mask, b_is_crowd=g.is_crowd) for g in gts] for mask, _ in preds]
    ) if gts and preds else np.zeros((len(preds), len(gts)))
    dt_areas = np.array([mask.area for mask, _ in preds], dtype=float)
    T = len(IOU_THRESHOLDS)
    D = len(preds)
    G = len(gts)
    dt_matched = np.zeros((T, D), dtype=bool)
    dt_ignored = np.zeros((T, D), dtype=bool)
    order = sorted(range(G), key=lambda gi: (bool(gt_ignore[gi]), gts[gi].instance_id))
    for t_idx, threshold in enumerate(IOU_THRESHOLDS):
        gt_taken = np.zeros(G, dtype=bool)
        for d in range(D):
            best = -1
            best_iou = 0.0
            best_ignored = False
            for gi in order:
                if gt_taken[gi] and not is_crowd[gi]:
                    continue
                # a real match beats any ignored one; stop once only
                # ignored candidates remain
                if best >= 0 and not best_ignored and gt_ignore[gi]:
                    break
                if iou[d, gi] >= threshold and iou[d, gi] > best_iou:
                    best, best_iou = gi, iou[d, gi]
                    best_ignored = bool(gt_ignore[gi])
            if best < 0:
                dt_ignored[t_idx, d] = _area_ignored(dt_areas[d], area_rng)
                continue
            gt_taken[best] = True
            dt_matched[t_idx, d] = True
            dt_ignored[t_idx, d] = gt_ignore[best]
    return _ImageEval(
        scores=np.array([s for _, s in preds], dtype=float),
        dt_matched=dt_matched,
        dt_ignored=dt_ignored,
        n_real_gt=int((~gt_ignore).sum()),
    )


def _accumulate(evals: list[_ImageEval]) -> tuple[np.ndarray, np.ndarray]:
    """Average precision and max recall per IoU threshold for one
    (area range, max_det) setting. Undefined values come back as NaN."""
    T = len(IOU_THRESHOLDS)
    ap = np.full(T, np.nan)
    recall = np.full(T, np.nan)
    evals = [e for e in evals if e is not None]
    if not evals:
        return ap, recall
    n_gt = sum(e.n_real_gt for e in evals)
    if n_gt == 0:
        return ap, recall
    scores = np.concatenate([e.scores for e in evals])
    order = np.argsort(-scores, kind="mergesort")
    for t in range(T):
        matched = np.concatenate([e.dt_matched[t] for e in evals])[order]
        ignored = np.concatenate([e.dt_ignored[t] for e in evals])[order]
        keep = ~ignored
        tp = np.cumsum(matched & keep).astype(float)
        fp = np.cumsum(~matched & keep).astype(float)
        if tp.size == 0:
            ap[t] = 0.0
            recall[t] = 0.0
            continue
        rc = tp / n_gt
        pr = tp / np.maximum(tp + fp, np.spacing(1))
        # 101-point interpolation with the running-max envelope
        envelope = np.maximum.accumulate(pr[::-1])[::-1]
        idx = np.searchsorted(rc, RECALL_POINTS, side="left")
        prec_at = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
        ap[t] = float(prec_at.mean())
        recall[t] = float(rc[-1])
    return ap, recall


def detection_metrics(
    proposals: Mapping[int, Sequence[ScoredMask]],
    gts: GroundTruthSet,
) -> DetectionMetrics:
    """Class-agnostic COCO-protocol metrics. Size buckets with no ground
    truth report 0.0."""
    image_ids = sorted(set(gts.by_image) | set(proposals))
    sorted_preds = {
        i: _sorted_preds(proposals.get(i, []), 100) for i in image_ids
    }

    def run(area_name: str, max_det: int) -> tuple[np.ndarray, np.ndarray]:
        rng = AREA_RANGES[area_name]
        evals = [
            _evaluate_image(
                sorted_preds[i][:max_det], gts.by_image.get(i, []), rng, max_det
            )
            for i in image_ids
        ]
        return _accumulate(evals)

    def mean(values: np.ndarray) -> float:
        finite = values[~np.isnan(values)]
        return float(finite.mean()) if finite.size else 0.0

    ap_all, rec_all = run("all", 100)
    _, rec_1 = run("all", 1)
    _, rec_10 = run("all", 10)
    ap_s, rec_s = run("small", 100)
    ap_m, rec_m = run("medium", 100)
    ap_l, rec_l = run("large", 100)
    return DetectionMetrics(
        ap50=mean(ap_all[:1]),
        ap75=mean(ap_all[5:6]),
        ap=mean(ap_all),
        ar1=mean(rec_1),
        ar10=mean(rec_10),
        ar100=mean(rec_all),
        ap_s=mean(ap_s),
        ap_m=mean(ap_m),
        ap_l=mean(ap_l),
        ar_s=mean(rec_s),
        ar_m=mean(rec_m),
        ar_l=mean(rec_l),
    )


# ---------------------------------------------------------------------------
# report rendering

_BUCKET_LABELS = {1: "1", 2: "2", 3: "3", 4: "4", 5: "5", 6: "6+"}


def recall_report_to_dict(report: StratifiedRecallReport) -> dict:
    return {
        "iou_thresholds": list(report.iou_thresholds),
        "max_dets": report.max_dets,
        "buckets": {
            _BUCKET_LABELS[b]: {
                "mean_average_recall": report.buckets[b].mean_average_recall,
                "gt_count": report.buckets[b].gt_count,
            }
            for b in sorted(report.buckets)
        },
    }


def render_recall_table(report: StratifiedRecallReport) -> str:
    cols = [_BUCKET_LABELS[b] for b in sorted(report.buckets)]
    recalls = [100.0 * report.buckets[b].mean_average_recall for b in sorted(report.buckets)]
    counts = [report.buckets[b].gt_count for b in sorted(report.buckets)]
    out = io.StringIO()
    out.write("Instances   " + "".join(f"{c:>9s}" for c in cols) + "\n")
    out.write("Recall (%)  " + "".join(f"{r:9.1f}" for r in recalls) + "\n")
    out.write("GT count    " + "".join(f"{c:9d}" for c in counts) + "\n")
    return out.getvalue()


def recall_report_to_csv(report: StratifiedRecallReport) -> str:
    lines = ["bucket,mean_average_recall,gt_count"]
    for b in sorted(report.buckets):
        rec = report.buckets[b]
        lines.append(f"{_BUCKET_LABELS[b]},{rec.mean_average_recall:.6f},{rec.gt_count}")
    return "\n".join(lines) + "\n"


_METRIC_COLS = ("ap50", "ap75", "ap", "ar1", "ar10", "ar100",
                "ap_s", "ap_m", "ap_l", "ar_s", "ar_m", "ar_l")


def render_detection_table(metrics: DetectionMetrics) -> str:
    vals = metrics.as_dict()
    head = "".join(f"{name.upper():>8s}" for name in _METRIC_COLS)
    row = "".join(f"{100.0 * vals[name]:8.1f}" for name in _METRIC_COLS)
    return head + "\n" + row + "\n"


def detection_metrics_to_csv(metrics: DetectionMetrics) -> str:
    vals = metrics.as_dict()
    head = ",".join(_METRIC_COLS)
    row = ",".join(f"{vals[name]:.6f}" for name in _METRIC_COLS)
    return head + "\n" + row + "\n"
