"""Instance-level human-analysis evaluation: mIoU, part AP, PCP, point AP.

Grids are 2-D integer label maps: 0 background, 1..C-1 part categories, 255
ignore.  Instance predictions carry a score and a box; comparisons between
instances happen in a shared coordinate frame (paste box-local grids onto the
image canvas first, see ``instance_canvas``).

Matching convention (fixed here and locked by oracle tests): predictions are
processed in descending score order, ties broken by input order; each one
matches the not-yet-matched ground-truth instance with the highest match
quality, provided that quality reaches the threshold.  AP uses COCO-style
101-recall-point interpolation.  With no ground truth and no predictions AP
is vacuously 1; with ground truth and no predictions it is 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .roi import Box

IGNORE_LABEL = 255

AP_P_THRESHOLDS = tuple(i / 10 for i in range(1, 10))
GPS_THRESHOLDS = tuple((50 + 5 * i) / 100 for i in range(10))


def _check_grid(labels: np.ndarray, num_classes: int | None, name: str) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 2 or labels.shape[0] < 1 or labels.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D grid, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError(f"{name} must hold integers, got dtype {labels.dtype}")
    if num_classes is not None:
        bad = (labels != IGNORE_LABEL) & ((labels < 0) | (labels >= num_classes))
        if np.any(bad):
            raise ValueError(
                f"{name} contains label {int(labels[bad].flat[0])} outside "
                f"[0, {num_classes}) and != {IGNORE_LABEL}"
            )
    return labels


@dataclass
class InstanceParsing:
    """One instance's part-label grid with a score and positioning box."""

    labels: np.ndarray
    score: float
    box: Box

    def __post_init__(self):
        self.labels = _check_grid(self.labels, None, "labels")


@dataclass
class SemSegMap:
    """Image-resolution semantic label grid."""

    labels: np.ndarray

    def __post_init__(self):
        self.labels = _check_grid(self.labels, None, "labels")


@dataclass
class DensePosePoint:
    """A surface-coordinate annotation at an image pixel."""

    part_index: int
    u: float
    v: float
    pixel: tuple[int, int]

    def __post_init__(self):
        if not (0.0 <= self.u <= 1.0 and 0.0 <= self.v <= 1.0):
            raise ValueError(f"u, v must lie in [0, 1], got ({self.u}, {self.v})")


@dataclass
class DensePoseInstance:
    """Per-instance point predictions/annotations with a score and box."""

    points: list
    score: float
    box: Box


@dataclass
class GPSConfig:
    """Gaussian point-similarity kernel width and distance source.

    distance_source is either "euclidean-uv" (same-part distance in UV space,
    mismatched parts count as infinitely far) or a lookup table loaded from
    JSON (see ``load_distance_table``) that supplies cross-part distances.
    """

    kappa: float = 0.255
    distance_source: object = "euclidean-uv"

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")

    def distance(self, pred: DensePosePoint | None, gt: DensePosePoint) -> float:
        if pred is None:
            return math.inf
        if pred.part_index == gt.part_index:
            return math.hypot(pred.u - gt.u, pred.v - gt.v)
        if isinstance(self.distance_source, str):
            if self.distance_source != "euclidean-uv":
                raise ValueError(f"unknown distance source {self.distance_source!r}")
            return math.inf
        table = np.asarray(self.distance_source)
        p, q = pred.part_index, gt.part_index
        if p >= table.shape[0] or q >= table.shape[1]:
            raise ValueError(f"part pair ({p}, {q}) outside distance table {table.shape}")
        return float(table[p, q])


def load_distance_table(obj: dict) -> np.ndarray:
    """Parse a {"parts": P, "distances": PxP} cross-part distance table."""
    if set(obj) != {"parts", "distances"}:
        raise ValueError(f"distance table must have keys parts/distances, got {sorted(obj)}")
    parts = obj["parts"]
    table = np.asarray(obj["distances"], dtype=np.float64)
    if table.shape != (parts, parts):
        raise ValueError(f"distance table shape {table.shape} != ({parts}, {parts})")
    if np.any(table < 0):
        raise ValueError("distance table entries must be non-negative")
    return table


# ---------------------------------------------------------------------------
# pasting


def _paste_offset(v: float) -> int:
    return math.floor(v + 0.5)


def instance_canvas(inst: InstanceParsing, image_w: int, image_h: int) -> np.ndarray:
    """Paste one instance's grid onto a background canvas at its box origin.

    Part labels and ignore pixels are preserved; everything outside the
    instance is background.  Regions outside the image are clipped.
    """
    canvas = np.zeros((image_h, image_w), dtype=np.int64)
    oy, ox = _paste_offset(inst.box.y1), _paste_offset(inst.box.x1)
    h, w = inst.labels.shape
    y0, x0 = max(oy, 0), max(ox, 0)
    y1, x1 = min(oy + h, image_h), min(ox + w, image_w)
    if y0 < y1 and x0 < x1:
        canvas[y0:y1, x0:x1] = inst.labels[y0 - oy : y1 - oy, x0 - ox : x1 - ox]
    return canvas


def paste_multi_person(
    instances: list[InstanceParsing], image_w: int, image_h: int
) -> SemSegMap:
    """Flatten instances into one semantic map, best scores claiming first.

    Instances are pasted in descending score order (ties by input order); a
    pixel belongs to the first instance whose part label (1..C-1, not ignore)
    covers it, and unclaimed pixels stay background.
    """
    canvas = np.zeros((image_h, image_w), dtype=np.int64)
    claimed = np.zeros((image_h, image_w), dtype=bool)
    order = sorted(range(len(instances)), key=lambda i: (-instances[i].score, i))
    for i in order:
        pasted = instance_canvas(instances[i], image_w, image_h)
        claim = (pasted > 0) & (pasted != IGNORE_LABEL) & ~claimed
        canvas[claim] = pasted[claim]
        claimed |= claim
    return SemSegMap(canvas)


# ---------------------------------------------------------------------------
# semantic segmentation


def miou(pred: SemSegMap, gt: SemSegMap, num_classes: int):
    """Per-class and mean intersection-over-union.

    Pixels where either grid holds the ignore label are excluded, which keeps
    the metric symmetric.  Classes with an empty union get NaN in the
    per-class list and are excluded from the mean.
    """
    p = _check_grid(pred.labels, num_classes, "pred")
    g = _check_grid(gt.labels, num_classes, "gt")
    if p.shape != g.shape:
        raise ValueError(f"grid shapes differ: pred {p.shape} vs gt {g.shape}")
    valid = (p != IGNORE_LABEL) & (g != IGNORE_LABEL)
    inter, union = _class_counts(p, g, valid, num_classes)
    per_class = np.full(num_classes, np.nan)
    present = union > 0
    per_class[present] = inter[present] / union[present]
    mean = float(np.mean(per_class[present])) if np.any(present) else float("nan")
    return per_class.tolist(), mean


def _class_counts(p: np.ndarray, g: np.ndarray, valid: np.ndarray, num_classes: int):
    """Intersection and union pixel counts per class over valid pixels."""
    pv, gv = p[valid], g[valid]
    inter = np.bincount(gv[pv == gv], minlength=num_classes)[:num_classes]
    p_count = np.bincount(pv, minlength=num_classes)[:num_classes]
    g_count = np.bincount(gv, minlength=num_classes)[:num_classes]
    union = p_count + g_count - inter
    return inter.astype(np.int64), union.astype(np.int64)


# ---------------------------------------------------------------------------
# instance matching


def app_score(pred: InstanceParsing, gt: InstanceParsing, num_classes: int) -> float:
    """Mean part-level pixel IoU over parts present in either instance.

    Both grids must be in one coordinate frame.  The part universe is the
    union of part categories (label >= 1) observed in either grid, so absent
    parts neither help nor hurt; with no parts at all the score is 0.
    """
    p = _check_grid(pred.labels, num_classes, "pred")
    g = _check_grid(gt.labels, num_classes, "gt")
    if p.shape != g.shape:
        raise ValueError(f"grid shapes differ: pred {p.shape} vs gt {g.shape}")
    valid = (p != IGNORE_LABEL) & (g != IGNORE_LABEL)
    inter, union = _class_counts(p, g, valid, num_classes)
    parts = np.nonzero(union[1:])[0] + 1
    if parts.size == 0:
        return 0.0
    return float(np.mean(inter[parts] / union[parts]))


def _greedy_match(preds, gts, quality, threshold):
    """Score-ordered greedy matching against not-yet-matched ground truths.

    Returns (ranked prediction indices, tp flags aligned to that ranking,
    match_of: gt index per ranked prediction or -1).
    """
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].score, i))
    gt_taken = [False] * len(gts)
    tp = [False] * len(order)
    match_of = [-1] * len(order)
    for rank, pi in enumerate(order):
        best_q = -math.inf
        best_gi = -1
        for gi in range(len(gts)):
            if gt_taken[gi]:
                continue
            q = quality(preds[pi], gts[gi])
            if q > best_q:
                best_q = q
                best_gi = gi
        if best_gi >= 0 and best_q >= threshold:
            gt_taken[best_gi] = True
            tp[rank] = True
            match_of[rank] = best_gi
    return order, tp, match_of


def _ap_interpolated(scores, tp_flags, n_gt) -> float:
    """COCO-style AP: 101-point interpolation over the precision envelope."""
    if n_gt == 0:
        return 1.0 if len(scores) == 0 else 0.0
    if len(scores) == 0:
        return 0.0
    tp = np.cumsum(np.asarray(tp_flags, dtype=np.float64))
    fp = np.cumsum(1.0 - np.asarray(tp_flags, dtype=np.float64))
    recall = tp / n_gt
    precision = tp / (tp + fp)
    for i in range(precision.size - 2, -1, -1):
        precision[i] = max(precision[i], precision[i + 1])
    thresholds = np.linspace(0.0, 1.0, 101)
    idx = np.searchsorted(recall, thresholds, side="left")
    picked = [precision[j] if j < precision.size else 0.0 for j in idx]
    return float(np.mean(picked))


def _scene_ap(scenes, quality, threshold) -> float:
    """Pool matches from (preds, gts) scenes into one ranked PR curve."""
    entries = []  # (score, scene index, rank within scene, tp)
    n_gt = 0
    for si, (preds, gts) in enumerate(scenes):
        n_gt += len(gts)
        order, tp, _ = _greedy_match(preds, gts, quality, threshold)
        for rank, pi in enumerate(order):
            entries.append((preds[pi].score, si, rank, tp[rank]))
    entries.sort(key=lambda e: (-e[0], e[1], e[2]))
    return _ap_interpolated([e[0] for e in entries], [e[3] for e in entries], n_gt)


def ap_p(
    preds: list[InstanceParsing],
    gts: list[InstanceParsing],
    threshold: float,
    num_classes: int,
) -> float:
    """Average precision with mean part IoU as the match quality."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    return _scene_ap([(preds, gts)], lambda p, g: app_score(p, g, num_classes), threshold)


def ap_p_vol(
    preds: list[InstanceParsing], gts: list[InstanceParsing], num_classes: int
) -> float:
    """Mean of the part AP over thresholds 0.1 .. 0.9."""
    return float(
        np.mean([ap_p(preds, gts, t, num_classes) for t in AP_P_THRESHOLDS])
    )


def pcp50(
    preds: list[InstanceParsing],
    gts: list[InstanceParsing],
    num_classes: int,
    *,
    threshold: float = 0.5,
    per_instance: bool = False,
) -> float:
    """Fraction of ground-truth parts parsed with IoU above the threshold.

    Predictions are first greedily matched to ground truths at the same
    threshold; unmatched ground truths contribute zero correct parts.  By
    default parts pool globally (sum correct / sum parts); per_instance=True
    averages each instance's own fraction instead.
    """
    return _scenes_pcp(
        [(preds, gts)], num_classes, threshold=threshold, per_instance=per_instance
    )


def _instance_part_ious(pred, gt, num_classes):
    p = _check_grid(pred.labels, num_classes, "pred")
    g = _check_grid(gt.labels, num_classes, "gt")
    if p.shape != g.shape:
        raise ValueError(f"grid shapes differ: pred {p.shape} vs gt {g.shape}")
    valid = (p != IGNORE_LABEL) & (g != IGNORE_LABEL)
    inter, union = _class_counts(p, g, valid, num_classes)
    return inter, union


def _gt_parts(inst: InstanceParsing, num_classes: int) -> np.ndarray:
    g = _check_grid(inst.labels, num_classes, "gt")
    present = np.unique(g)
    return present[(present >= 1) & (present != IGNORE_LABEL)]


def _scenes_pcp(scenes, num_classes, *, threshold=0.5, per_instance=False) -> float:
    total_parts = 0
    total_correct = 0
    fractions = []
    for preds, gts in scenes:
        quality = lambda p, g: app_score(p, g, num_classes)  # noqa: E731
        order, tp, match_of = _greedy_match(preds, gts, quality, threshold)
        pred_of_gt = {match_of[r]: preds[order[r]] for r in range(len(order)) if tp[r]}
        for gi, gt in enumerate(gts):
            parts = _gt_parts(gt, num_classes)
            total_parts += parts.size
            correct = 0
            if gi in pred_of_gt and parts.size:
                inter, union = _instance_part_ious(pred_of_gt[gi], gt, num_classes)
                iou = np.zeros(num_classes)
                ok = union > 0
                iou[ok] = inter[ok] / union[ok]
                correct = int(np.count_nonzero(iou[parts] > threshold))
            total_correct += correct
            if parts.size:
                fractions.append(correct / parts.size)
    if total_parts == 0:
        raise ValueError("PCP is undefined: ground truth contains no parts")
    if per_instance:
        return float(np.mean(fractions))
    return total_correct / total_parts


# ---------------------------------------------------------------------------
# dense-pose point similarity


def gps(
    pred_points: list[DensePosePoint | None],
    gt_points: list[DensePosePoint],
    cfg: GPSConfig,
) -> float:
    """Mean Gaussian similarity exp(-d^2 / (2 kappa^2)) over annotated points.

    Points are paired positionally (prediction i answers annotation i); a
    missing prediction (None) counts as infinitely far.
    """
    if len(gt_points) == 0:
        raise ValueError("gps requires at least one ground-truth point")
    if len(pred_points) != len(gt_points):
        raise ValueError(
            f"point lists must pair up: {len(pred_points)} predictions "
            f"vs {len(gt_points)} annotations"
        )
    denom = 2.0 * cfg.kappa * cfg.kappa
    sims = [math.exp(-cfg.distance(p, g) ** 2 / denom) for p, g in zip(pred_points, gt_points)]
    return float(np.mean(sims))


def _gps_quality(pred: DensePoseInstance, gt: DensePoseInstance, cfg: GPSConfig) -> float:
    """GPS between instances: predictions are looked up at annotated pixels."""
    by_pixel = {}
    for pt in pred.points:
        by_pixel.setdefault(pt.pixel, pt)
    paired = [by_pixel.get(g.pixel) for g in gt.points]
    return gps(paired, gt.points, cfg)


def densepose_ap(
    preds: list[DensePoseInstance],
    gts: list[DensePoseInstance],
    cfg: GPSConfig | None = None,
) -> dict:
    """AP over GPS thresholds 0.50 .. 0.95 plus the 0.5 / 0.75 cuts."""
    return _scenes_densepose_ap([(preds, gts)], cfg or GPSConfig())


def _scenes_densepose_ap(scenes, cfg: GPSConfig) -> dict:
    for _, gts in scenes:
        for gt in gts:
            if len(gt.points) == 0:
                raise ValueError("every ground-truth instance needs >= 1 point")
    quality = lambda p, g: _gps_quality(p, g, cfg)  # noqa: E731
    by_thr = [_scene_ap(scenes, quality, t) for t in GPS_THRESHOLDS]
    return {
        "AP": float(np.mean(by_thr)),
        "AP50": by_thr[0],
        "AP75": by_thr[5],
    }


# ---------------------------------------------------------------------------
# multi-image aggregation (used by the CLI)


@dataclass
class ParsingReport:
    miou_mean: float
    miou_per_class: list
    ap_p_50: float
    ap_p_vol: float
    pcp_50: float
    per_image_miou: dict = field(default_factory=dict)


def evaluate_parsing_scenes(
    scenes: dict[str, tuple[list[InstanceParsing], list[InstanceParsing]]],
    image_sizes: dict[str, tuple[int, int]],
    num_classes: int,
    *,
    pcp_per_instance: bool = False,
) -> ParsingReport:
    """Full parsing evaluation over images keyed by id.

    Instances are pasted to image frames; mIoU pools pixel counts across
    images, the instance metrics pool ranked matches across images.
    """
    inter_total = np.zeros(num_classes, dtype=np.int64)
    union_total = np.zeros(num_classes, dtype=np.int64)
    per_image_miou = {}
    canvas_scenes = []
    for image_id, (preds, gts) in scenes.items():
        w, h = image_sizes[image_id]
        pred_map = paste_multi_person(preds, w, h)
        gt_map = paste_multi_person(gts, w, h)
        _, per_image_miou[image_id] = miou(pred_map, gt_map, num_classes)
        valid = (pred_map.labels != IGNORE_LABEL) & (gt_map.labels != IGNORE_LABEL)
        inter, union = _class_counts(pred_map.labels, gt_map.labels, valid, num_classes)
        inter_total += inter
        union_total += union
        canvas_scenes.append(
            (
                [InstanceParsing(instance_canvas(p, w, h), p.score, p.box) for p in preds],
                [InstanceParsing(instance_canvas(g, w, h), g.score, g.box) for g in gts],
            )
        )

    per_class = np.full(num_classes, np.nan)
    present = union_total > 0
    per_class[present] = inter_total[present] / union_total[present]
    mean_iou = float(np.mean(per_class[present])) if np.any(present) else float("nan")

    quality = lambda p, g: app_score(p, g, num_classes)  # noqa: E731
    ap50 = _scene_ap(canvas_scenes, quality, 0.5)
    vol = float(np.mean([_scene_ap(canvas_scenes, quality, t) for t in AP_P_THRESHOLDS]))
    pcp = _scenes_pcp(canvas_scenes, num_classes, per_instance=pcp_per_instance)
    return ParsingReport(
        miou_mean=mean_iou,
        miou_per_class=[None if math.isnan(v) else float(v) for v in per_class],
        ap_p_50=ap50,
        ap_p_vol=vol,
        pcp_50=pcp,
        per_image_miou=per_image_miou,
    )


def evaluate_densepose_scenes(
    scenes: dict[str, tuple[list[DensePoseInstance], list[DensePoseInstance]]],
    cfg: GPSConfig,
) -> dict:
    return _scenes_densepose_ap(list(scenes.values()), cfg)
