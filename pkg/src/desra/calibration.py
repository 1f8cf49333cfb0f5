"""Per-class texture-similarity calibration.

Artifact detection thresholds the similarity map relative to how much
texture variation a semantic class normally tolerates. That tolerance is
the 85th percentile (descending order) of similarity values observed for
the class over a calibration corpus of clean image pairs: sky pixels sit
near 1, vegetation much lower.

The accumulator supports two storage modes:

* exact: keeps every observed value per class, grouped with one argsort
  per image; finalize sorts and picks the nearest-rank order statistic.
* histogram: 4096 fixed-width bins over [0, 1]; finalize walks the
  counts and returns the selected bin's midpoint (error <= 1/4096).

Accumulators merge associatively so a corpus can be sharded across
workers and combined in any grouping.
"""

import json
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import (
    ClassCountMismatchError,
    DimensionMismatchError,
    MissingFileError,
    ParseError,
    SchemaVersionMismatchError,
    WriteError,
    WrongMapKindError,
)
from .stats import DEFAULT_C, DistanceMap

NUM_CLASSES = 150
HISTOGRAM_BINS = 4096
WEIGHTS_SCHEMA = "desra-weights/1"

WEIGHT_MIN = 0.05
WEIGHT_MAX = 1.0


@dataclass
class ClassAccumulator:
    classes: int = NUM_CLASSES
    histogram: bool = False
    values: list = field(default_factory=list)
    counts: np.ndarray | None = None

    def __post_init__(self):
        if not self.values:
            self.values = [[] for _ in range(self.classes)]
        if self.histogram and self.counts is None:
            self.counts = np.zeros((self.classes, HISTOGRAM_BINS), dtype=np.int64)


@dataclass(frozen=True)
class AdjustmentTable:
    """Per-class similarity tolerances A_k in [WEIGHT_MIN, WEIGHT_MAX].

    seen[k] is False for classes absent from the corpus; their weight is
    pinned to 1.0 so unseen classes never loosen the detector.
    """

    weights: np.ndarray
    percentile: float
    c_used: float
    seen: np.ndarray
    corpus_id: str = ""

    @staticmethod
    def uniform(classes: int = NUM_CLASSES, c_used: float = DEFAULT_C):
        return AdjustmentTable(
            weights=np.ones(classes, dtype=np.float64),
            percentile=85.0,
            c_used=c_used,
            seen=np.zeros(classes, dtype=bool),
        )


def accumulate(acc: ClassAccumulator, d_map: DistanceMap, labels: np.ndarray) -> None:
    """Fold one image's similarity map into the accumulator, in place."""
    if d_map.kind != "similarity_D":
        raise WrongMapKindError(
            f"calibration needs a similarity_D map, got {d_map.kind!r}"
        )
    if d_map.values.shape != labels.shape:
        raise DimensionMismatchError(
            f"map shape {d_map.values.shape} != label shape {labels.shape}"
        )
    if d_map.values.size and (d_map.values.min() < 0.0 or d_map.values.max() > 1.0):
        raise ValueError("similarity values must lie in [0, 1]")
    flat_labels = labels.ravel()
    flat_values = d_map.values.ravel()
    if acc.histogram:
        bins = np.minimum(
            (flat_values * HISTOGRAM_BINS).astype(np.int64), HISTOGRAM_BINS - 1
        )
        np.add.at(acc.counts, (flat_labels.astype(np.int64), bins), 1)
        return
    order = np.argsort(flat_labels, kind="stable")
    sorted_labels = flat_labels[order]
    sorted_values = flat_values[order]
    present = np.unique(sorted_labels)
    starts = np.searchsorted(sorted_labels, present, side="left")
    ends = np.searchsorted(sorted_labels, present, side="right")
    for k, lo, hi in zip(present, starts, ends):
        acc.values[int(k)].append(sorted_values[lo:hi])


def merge(a: ClassAccumulator, b: ClassAccumulator) -> ClassAccumulator:
    """Combine two accumulators into a new one; both inputs are untouched."""
    if a.classes != b.classes:
        raise ClassCountMismatchError(f"{a.classes} != {b.classes}")
    if a.histogram != b.histogram:
        raise ValueError("cannot merge exact and histogram accumulators")
    out = ClassAccumulator(classes=a.classes, histogram=a.histogram)
    if a.histogram:
        out.counts = a.counts + b.counts
    else:
        out.values = [list(va) + list(vb) for va, vb in zip(a.values, b.values)]
    return out


def _descending_rank(count: int, percentile: float) -> int:
    """1-indexed nearest-rank position in a descending sort.

    Rational arithmetic keeps ceil(p/100 * N) exact; float rounding could
    otherwise push a product like 0.85 * N an epsilon past an integer.
    """
    return max(1, math.ceil(Fraction(percentile) * count / 100))


def finalize(
    acc: ClassAccumulator,
    percentile: float = 85.0,
    c_used: float = DEFAULT_C,
    corpus_id: str = "",
) -> AdjustmentTable:
    """Reduce an accumulator to an AdjustmentTable.

    The per-class statistic is the nearest-rank percentile taken over a
    descending sort (rank ceil(p/100 * N)), clamped to
    [WEIGHT_MIN, WEIGHT_MAX]. Classes with no observations get weight 1.0
    and seen=False.
    """
    if not 0.0 < percentile < 100.0:
        raise ValueError(f"percentile must be in (0, 100), got {percentile}")
    weights = np.ones(acc.classes, dtype=np.float64)
    seen = np.zeros(acc.classes, dtype=bool)
    for k in range(acc.classes):
        if acc.histogram:
            total = int(acc.counts[k].sum())
            if total == 0:
                continue
            rank = _descending_rank(total, percentile)
            # walk bins from the top; the rank-th largest sample lives in
            # the first bin whose cumulative (descending) count reaches rank
            running = 0
            value = 0.0
            for b in range(HISTOGRAM_BINS - 1, -1, -1):
                running += int(acc.counts[k, b])
                if running >= rank:
                    value = (b + 0.5) / HISTOGRAM_BINS
                    break
        else:
            if not acc.values[k]:
                continue
            samples = np.concatenate(acc.values[k])
            rank = _descending_rank(samples.size, percentile)
            value = float(np.sort(samples)[samples.size - rank])
        seen[k] = True
        weights[k] = min(max(value, WEIGHT_MIN), WEIGHT_MAX)
    return AdjustmentTable(
        weights=weights,
        percentile=float(percentile),
        c_used=float(c_used),
        seen=seen,
        corpus_id=corpus_id,
    )


def save_weights(table: AdjustmentTable, path: str) -> None:
    payload = {
        "schema": WEIGHTS_SCHEMA,
        "percentile": table.percentile,
        "C": table.c_used,
        "corpus_id": table.corpus_id,
        "weights": {str(k): float(table.weights[k]) for k in range(table.weights.size)},
        "seen": {str(k): bool(table.seen[k]) for k in range(table.seen.size)},
    }
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise WriteError(f"failed to write weights: {path}") from exc


def load_weights(path: str) -> AdjustmentTable:
    if not os.path.isfile(path):
        raise MissingFileError(f"no such weights file: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON ({exc.msg})") from exc
    schema = payload.get("schema")
    if schema != WEIGHTS_SCHEMA:
        raise SchemaVersionMismatchError(
            f"{path}: schema {schema!r}, expected {WEIGHTS_SCHEMA!r}"
        )
    for key in ("weights", "percentile"):
        if key not in payload:
            raise ParseError(f"{path}: missing key {key!r}")
    raw = payload["weights"]
    classes = len(raw)
    weights = np.ones(classes, dtype=np.float64)
    seen = np.zeros(classes, dtype=bool)
    raw_seen = payload.get("seen", {})
    for key, value in raw.items():
        k = int(key)
        if not 0 <= k < classes:
            raise ParseError(f"{path}: class key {key!r} out of range")
        weights[k] = float(value)
        seen[k] = bool(raw_seen.get(key, True))
    return AdjustmentTable(
        weights=weights,
        percentile=float(payload["percentile"]),
        c_used=float(payload.get("C", DEFAULT_C)),
        seen=seen,
        corpus_id=str(payload.get("corpus_id", "")),
    )
