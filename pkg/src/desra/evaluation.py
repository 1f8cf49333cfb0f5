"""Mask-agreement metrics: IoU, region precision/recall, removal/addition.

Region metrics treat each connected component as one unit. A detected
region counts as correct when more than fraction p of its area lies on
ground truth; a ground-truth region counts as recalled when more than p
of it is covered by the detection. Both comparisons are strict, so a
region exactly half covered at p = 0.5 does not count.

Removal and addition describe what a second detection pass (after some
corrective step) did to the first: a ground-truth region is removed when
the new detection no longer touches it at all, and a detected region is
an addition when it touches no ground truth.
"""

from dataclasses import dataclass

import numpy as np

from .calibration import AdjustmentTable
from .errors import DimensionMismatchError, EmptyInputError
from .mask import DetectionConfig, RegionSet, connected_components, mask_from_map

DEFAULT_OVERLAP_P = 0.5


@dataclass(frozen=True)
class ImageEval:
    id: str
    iou: float
    detected_regions: int
    correct_regions: int
    gt_regions: int
    recalled_regions: int
    removed_regions: int
    added_regions: int


@dataclass(frozen=True)
class EvalReport:
    """Corpus-level aggregation; rates are None when their denominator is 0.

    precision/recall/removal pool region counts across images
    (micro-average); mean_iou_percent is the per-image mean scaled to
    [0, 100].
    """

    mean_iou_percent: float
    precision: float | None
    recall: float | None
    removal_rate: float | None
    addition_rate: float | None
    per_image: tuple
    config_echo: dict | None = None


@dataclass(frozen=True)
class SweepRow:
    threshold: float
    mean_iou_percent: float
    precision: float | None
    recall: float | None
    product: float | None


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two {0,1} masks; two empties agree (1.0)."""
    if a.shape != b.shape:
        raise DimensionMismatchError(f"mask shapes differ: {a.shape} vs {b.shape}")
    a = a.astype(bool)
    b = b.astype(bool)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def region_overlaps(regions: RegionSet, other: np.ndarray) -> np.ndarray:
    """Per-region pixel overlap with the other mask, indexed by region id."""
    counts = np.zeros(len(regions.regions) + 1, dtype=np.int64)
    if regions.regions:
        hits = regions.labels[other.astype(bool)]
        counts = np.bincount(hits, minlength=len(regions.regions) + 1)
    return counts


def evaluate_pair(
    detected: np.ndarray,
    gt: np.ndarray,
    p: float = DEFAULT_OVERLAP_P,
    connectivity: int = 8,
    image_id: str = "",
) -> ImageEval:
    if detected.shape != gt.shape:
        raise DimensionMismatchError(
            f"mask shapes differ: {detected.shape} vs {gt.shape}"
        )
    det_rs = connected_components(detected, connectivity)
    gt_rs = connected_components(gt, connectivity)
    det_overlap = region_overlaps(det_rs, gt)
    gt_overlap = region_overlaps(gt_rs, detected)
    correct = sum(1 for r in det_rs.regions if det_overlap[r.id] / r.area > p)
    recalled = sum(1 for r in gt_rs.regions if gt_overlap[r.id] / r.area > p)
    added = sum(1 for r in det_rs.regions if det_overlap[r.id] == 0)
    removed = sum(1 for r in gt_rs.regions if gt_overlap[r.id] == 0)
    return ImageEval(
        id=image_id,
        iou=iou(detected, gt),
        detected_regions=len(det_rs.regions),
        correct_regions=correct,
        gt_regions=len(gt_rs.regions),
        recalled_regions=recalled,
        removed_regions=removed,
        added_regions=added,
    )


def aggregate(per_image: list, config_echo: dict | None = None) -> EvalReport:
    if not per_image:
        raise EmptyInputError("no image evaluations to aggregate")
    n_det = sum(e.detected_regions for e in per_image)
    n_correct = sum(e.correct_regions for e in per_image)
    n_gt = sum(e.gt_regions for e in per_image)
    n_recalled = sum(e.recalled_regions for e in per_image)
    n_removed = sum(e.removed_regions for e in per_image)
    n_added = sum(e.added_regions for e in per_image)
    return EvalReport(
        mean_iou_percent=100.0 * sum(e.iou for e in per_image) / len(per_image),
        precision=None if n_det == 0 else n_correct / n_det,
        recall=None if n_gt == 0 else n_recalled / n_gt,
        removal_rate=None if n_gt == 0 else n_removed / n_gt,
        addition_rate=None if n_det == 0 else n_added / n_det,
        per_image=tuple(per_image),
        config_echo=config_echo,
    )


def threshold_sweep(
    items: list,
    weights: AdjustmentTable,
    cfg: DetectionConfig,
    thresholds: list,
    p: float = DEFAULT_OVERLAP_P,
):
    """Re-binarize precomputed similarity maps at each threshold.

    items is a list of (d_map, labels, gt_mask) triples, so the sigma
    pass runs once per image no matter how many thresholds are swept.
    Returns (rows, best_index) where best maximizes precision * recall;
    ties go to the lowest threshold, and best_index is None if no row
    has a defined product.
    """
    rows = []
    for thr in thresholds:
        evals = [
            evaluate_pair(
                mask_from_map(d_map, labels, weights, cfg, threshold=thr),
                gt,
                p=p,
                connectivity=cfg.component_connectivity,
            )
            for d_map, labels, gt in items
        ]
        report = aggregate(evals)
        product = None
        if report.precision is not None and report.recall is not None:
            product = report.precision * report.recall
        rows.append(
            SweepRow(
                threshold=float(thr),
                mean_iou_percent=report.mean_iou_percent,
                precision=report.precision,
                recall=report.recall,
                product=product,
            )
        )
    best_index = None
    for i, row in enumerate(rows):
        if row.product is None:
            continue
        if best_index is None or row.product > rows[best_index].product:
            best_index = i
    return rows, best_index
