"""Independent reference implementations used only to check the package.

Everything in here is deliberately written in the most literal way possible
(scalar loops, no shared helpers with src/) so that agreement with the
package is meaningful. Nothing in this module imports instamask.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit as _njit

    _HAVE_NUMBA = True
except Exception:  # pragma: no cover - numba is present in the dev env
    _HAVE_NUMBA = False


# ---------------------------------------------------------------------------
# cyclic Jacobi eigensolver


def _jacobi_sweeps(a, v, tol_abs, skip, max_sweeps):
    """Textbook cyclic Jacobi: rotate away each upper-triangle element in
    turn until the off-diagonal Frobenius norm drops below tol_abs."""
    n = a.shape[0]
    for _ in range(max_sweeps):
        off = 0.0
        for i in range(n - 1):
            for j in range(i + 1, n):
                off += a[i, j] * a[i, j]
        if (2.0 * off) ** 0.5 <= tol_abs:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= skip:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta == 0.0:
                    t = 1.0
                else:
                    sg = 1.0 if theta > 0.0 else -1.0
                    t = sg / (abs(theta) + (1.0 + theta * theta) ** 0.5)
                c = 1.0 / (1.0 + t * t) ** 0.5
                s = t * c
                for j in range(n):  # rows p and q of J^T A
                    apj = a[p, j]
                    aqj = a[q, j]
                    a[p, j] = c * apj - s * aqj
                    a[q, j] = s * apj + c * aqj
                for i in range(n):  # columns p and q of (J^T A) J
                    aip = a[i, p]
                    aiq = a[i, q]
                    a[i, p] = c * aip - s * aiq
                    a[i, q] = s * aip + c * aiq
                a[p, q] = 0.0
                a[q, p] = 0.0
                for i in range(n):  # accumulate V J
                    vip = v[i, p]
                    viq = v[i, q]
                    v[i, p] = c * vip - s * viq
                    v[i, q] = s * vip + c * viq


if _HAVE_NUMBA:
    _jacobi_sweeps = _njit(cache=True)(_jacobi_sweeps)


def jacobi_eigh(a, tol=1e-12, max_sweeps=60):
    """All eigenpairs of a symmetric matrix by cyclic Jacobi rotations.

    Returns (values ascending, vectors as columns).
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    v = np.eye(n)
    if n == 1:
        return a[0, :1].copy(), v
    scale = max(np.sqrt((a * a).sum()), np.finfo(float).tiny)
    _jacobi_sweeps(a, v, tol * scale, 1e-14 * scale, max_sweeps)
    vals = np.diag(a).copy()
    order = np.argsort(vals, kind="stable")
    return vals[order], v[:, order]


# ---------------------------------------------------------------------------
# COCO compressed RLE, transcribed from the C mask API


def rle_counts_from_bits(bits):
    """Run counts of a 0/1 sequence, starting with the number of zeros."""
    counts = []
    last = 0
    run = 0
    for b in bits:
        b = int(b)
        if b != last:
            counts.append(run)
            run = 0
            last = b
        run += 1
    counts.append(run)
    return counts


def rle_counts_from_mask(arr):
    """Column-major run counts of a 2-D boolean array."""
    arr = np.asarray(arr, dtype=bool)
    h, w = arr.shape
    bits = [arr[r, c] for c in range(w) for r in range(h)]
    return rle_counts_from_bits(bits)


def rle_string_from_counts(counts):
    """LEB128-like packing: 5 value bits per char, 0x20 continuation, +48.

    Counts from the fourth one on are stored as deltas against the count two
    positions back (same parity run).
    """
    out = []
    for i in range(len(counts)):
        x = int(counts[i])
        if i > 2:
            x -= int(counts[i - 2])
        while True:
            c = x & 0x1F
            x >>= 5
            more = (x != -1) if (c & 0x10) else (x != 0)
            if more:
                c |= 0x20
            out.append(chr(c + 48))
            if not more:
                break
    return "".join(out)


def rle_counts_from_string(s):
    counts = []
    p = 0
    while p < len(s):
        x = 0
        k = 0
        while True:
            c = ord(s[p]) - 48
            if c < 0 or c > 63:
                raise ValueError("chunk outside the RLE alphabet")
            x |= (c & 0x1F) << (5 * k)
            p += 1
            k += 1
            if not (c & 0x20):
                if c & 0x10:
                    x |= -1 << (5 * k)
                break
            if p >= len(s):
                raise ValueError("truncated chunk sequence")
        if len(counts) > 2:
            x += counts[-2]
        counts.append(x)
    return counts


def mask_from_counts(counts, h, w):
    flat = np.zeros(h * w, dtype=bool)
    pos = 0
    val = False
    for c in counts:
        if val:
            flat[pos : pos + c] = True
        pos += c
        val = not val
    return flat.reshape((h, w), order="F")


# ---------------------------------------------------------------------------
# even-odd point-in-polygon


def point_in_polygon(px, py, pts):
    """Even-odd test counting edge crossings at x <= px (leftward ray).

    Edges use the half-open rule (y1 <= py < y2 or y2 <= py < y1), the same
    vertex convention the scanline fill must follow.
    """
    inside = False
    n = len(pts)
    for i in range(n):
        x1, y1 = pts[i]
        x2, y2 = pts[(i + 1) % n]
        if (y1 <= py < y2) or (y2 <= py < y1):
            xint = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            if xint <= px:
                inside = not inside
    return inside


def rasterize_by_points(polygons, h, w):
    out = np.zeros((h, w), dtype=bool)
    for pts in polygons:
        for r in range(h):
            for c in range(w):
                if point_in_polygon(c + 0.5, r + 0.5, pts):
                    out[r, c] = True
    return out


# ---------------------------------------------------------------------------
# flood-fill connected components


def flood_components(arr, connectivity=4):
    arr = np.asarray(arr, dtype=bool)
    h, w = arr.shape
    seen = np.zeros_like(arr)
    if connectivity == 4:
        nbrs = ((1, 0), (-1, 0), (0, 1), (0, -1))
    else:
        nbrs = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1))
    comps = []
    for r0 in range(h):
        for c0 in range(w):
            if not arr[r0, c0] or seen[r0, c0]:
                continue
            comp = np.zeros_like(arr)
            stack = [(r0, c0)]
            seen[r0, c0] = True
            while stack:
                r, c = stack.pop()
                comp[r, c] = True
                for dr, dc in nbrs:
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < h and 0 <= cc < w and arr[rr, cc] and not seen[rr, cc]:
                        seen[rr, cc] = True
                        stack.append((rr, cc))
            comps.append(comp)
    return comps


# ---------------------------------------------------------------------------
# greedy matching, enumerated step by step


def _iou_plain(a, b, crowd=False):
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    inter = int((a & b).sum())
    denom = int(a.sum()) if crowd else int((a | b).sum())
    return inter / denom if denom else 0.0


def greedy_match_enum(preds, gts, thr):
    """preds: [(bool mask, score)] already sorted by score descending.
    gts: [(instance_id, bool mask, iscrowd)].

    Returns (per-pred matched instance id or None, per-pred crowd-absorbed flag).
    """
    taken = set()
    out = []
    absorbed = []
    for mask, _ in preds:
        best_id = None
        best_iou = 0.0
        for inst_id, gmask, crowd in sorted(gts, key=lambda g: g[0]):
            if crowd or inst_id in taken:
                continue
            iou = _iou_plain(mask, gmask)
            if iou >= thr and iou > best_iou:
                best_id, best_iou = inst_id, iou
        if best_id is not None:
            taken.add(best_id)
            out.append(best_id)
            absorbed.append(False)
            continue
        hit = any(
            crowd and _iou_plain(mask, gmask, crowd=True) >= thr
            for _, gmask, crowd in gts
        )
        out.append(None)
        absorbed.append(hit)
    return out, absorbed


# ---------------------------------------------------------------------------
# reference COCO-style evaluator (segmentation, single class)

IOU_THRS = np.linspace(0.5, 0.95, 10)
REC_THRS = np.linspace(0.0, 1.0, 101)
AREA_RNGS = {
    "all": (0.0, 1e10),
    "small": (0.0, 32.0 ** 2),
    "medium": (32.0 ** 2, 96.0 ** 2),
    "large": (96.0 ** 2, 1e10),
}


def _evaluate_img(gt, dt, arng, max_det):
    """One image, one area range, one detection cap; mirrors the published
    evaluator step for step (including its tie and break rules)."""
    if len(gt) == 0 and len(dt) == 0:
        return None
    gig = []
    for g in gt:
        ignore = g["iscrowd"] or g["area"] < arng[0] or g["area"] > arng[1]
        gig.append(1 if ignore else 0)
    gtind = sorted(range(len(gt)), key=lambda i: gig[i])
    gt = [gt[i] for i in gtind]
    gig = [gig[i] for i in gtind]
    dtind = np.argsort([-d["score"] for d in dt], kind="mergesort")
    dt = [dt[i] for i in dtind][:max_det]
    iscrowd = [int(g["iscrowd"]) for g in gt]
    T = len(IOU_THRS)
    G = len(gt)
    D = len(dt)
    ious = np.zeros((D, G))
    for di, d in enumerate(dt):
        for gi, g in enumerate(gt):
            ious[di, gi] = _iou_plain(d["mask"], g["mask"], crowd=bool(iscrowd[gi]))
    gtm = np.zeros((T, G))
    dtm = np.zeros((T, D))
    dtig = np.zeros((T, D))
    for tind, t in enumerate(IOU_THRS):
        for dind, d in enumerate(dt):
            iou = min(t, 1 - 1e-10)
            m = -1
            for gind in range(G):
                if gtm[tind, gind] > 0 and not iscrowd[gind]:
                    continue
                if m > -1 and gig[m] == 0 and gig[gind] == 1:
                    break
                if ious[dind, gind] < iou:
                    continue
                iou = ious[dind, gind]
                m = gind
            if m == -1:
                continue
            dtig[tind, dind] = gig[m]
            dtm[tind, dind] = gt[m]["id"]
            gtm[tind, m] = d["id"]
    a_out = np.array(
        [d["area"] < arng[0] or d["area"] > arng[1] for d in dt]
    ).reshape((1, D))
    dtig = np.logical_or(dtig, np.logical_and(dtm == 0, np.repeat(a_out, T, 0)))
    return {
        "dtMatches": dtm,
        "dtScores": np.array([d["score"] for d in dt]),
        "gtIgnore": np.array(gig),
        "dtIgnore": dtig,
    }


def ref_detection_metrics(gts_by_image, dts_by_image):
    """Class-agnostic AP/AR following the COCO accumulation protocol.

    gts_by_image: {image_id: [{"id", "area", "iscrowd", "mask"}]}
    dts_by_image: {image_id: [{"id", "area", "score", "mask"}]}
    Returns the twelve headline numbers; -1 where undefined (no ground truth).
    """
    img_ids = sorted(set(gts_by_image) | set(dts_by_image))
    max_dets = [1, 10, 100]
    a_names = ["all", "small", "medium", "large"]
    T = len(IOU_THRS)
    R = len(REC_THRS)
    A = len(a_names)
    M = len(max_dets)
    precision = -np.ones((T, R, A, M))
    recall = -np.ones((T, A, M))
    for ai, aname in enumerate(a_names):
        arng = AREA_RNGS[aname]
        for mi, max_det in enumerate(max_dets):
            evals = [
                _evaluate_img(
                    gts_by_image.get(i, []), dts_by_image.get(i, []), arng, max_det
                )
                for i in img_ids
            ]
            evals = [e for e in evals if e is not None]
            if not evals:
                continue
            scores = np.concatenate([e["dtScores"][:max_det] for e in evals])
            inds = np.argsort(-scores, kind="mergesort")
            dtm = np.concatenate([e["dtMatches"][:, :max_det] for e in evals], axis=1)[
                :, inds
            ]
            dtig = np.concatenate([e["dtIgnore"][:, :max_det] for e in evals], axis=1)[
                :, inds
            ]
            gig = np.concatenate([e["gtIgnore"] for e in evals])
            npig = int((gig == 0).sum())
            if npig == 0:
                continue
            tps = np.logical_and(dtm, np.logical_not(dtig))
            fps = np.logical_and(np.logical_not(dtm), np.logical_not(dtig))
            tp_sum = np.cumsum(tps, axis=1).astype(float)
            fp_sum = np.cumsum(fps, axis=1).astype(float)
            for t in range(T):
                tp = tp_sum[t]
                fp = fp_sum[t]
                nd = len(tp)
                rc = tp / npig
                pr = tp / (fp + tp + np.spacing(1))
                q = np.zeros(R)
                recall[t, ai, mi] = rc[-1] if nd else 0.0
                pr = pr.tolist()
                for i in range(nd - 1, 0, -1):
                    if pr[i] > pr[i - 1]:
                        pr[i - 1] = pr[i]
                ridx = np.searchsorted(rc, REC_THRS, side="left")
                for ri, pi in enumerate(ridx):
                    if pi < nd:
                        q[ri] = pr[pi]
                precision[t, :, ai, mi] = q

    def _p(t_slice, ai, mi):
        s = precision[t_slice, :, ai, mi]
        valid = s[s > -1]
        return float(valid.mean()) if valid.size else -1.0

    def _r(ai, mi):
        s = recall[:, ai, mi]
        valid = s[s > -1]
        return float(valid.mean()) if valid.size else -1.0

    return {
        "ap": _p(slice(None), 0, 2),
        "ap50": _p(slice(0, 1), 0, 2),
        "ap75": _p(slice(5, 6), 0, 2),
        "ap_s": _p(slice(None), 1, 2),
        "ap_m": _p(slice(None), 2, 2),
        "ap_l": _p(slice(None), 3, 2),
        "ar1": _r(0, 0),
        "ar10": _r(0, 1),
        "ar100": _r(0, 2),
        "ar_s": _r(1, 2),
        "ar_m": _r(2, 2),
        "ar_l": _r(3, 2),
    }
