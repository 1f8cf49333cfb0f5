"""Local texture statistics and the texture-distance family.

The detector compares two renditions of the same scene through the local
standard deviation of their luma planes, computed over a sliding n x n
window with symmetric edge padding. Three pixelwise comparisons are
derived from the sigma pair (sx from the suspect image, sy from the
reference):

* abs_d        (sx - sy)^2
* rel_d        (sx - sy)^2 / (2 sx sy)
* similarity_D 2 sx sy / (sx^2 + sy^2 + C), 1.0 where both sigmas are
               below the textureless floor

similarity_D is near 1 where the two images have similar local texture
and falls toward 0 where they diverge.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EvenWindowError, NonPositiveCError

DEFAULT_WINDOW = 11
DEFAULT_C = 9e-4  # (0.03)^2, same stabilizer scale as SSIM's contrast term
DEFAULT_SIGMA_FLOOR = 1e-3

MAP_KINDS = ("abs_d", "rel_d", "similarity_D")


@dataclass(frozen=True)
class DistanceMap:
    """A pixelwise comparison plane tagged with which formula produced it."""

    values: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in MAP_KINDS:
            raise ValueError(f"unknown map kind {self.kind!r}")


@dataclass(frozen=True)
class IntegralTables:
    """Summed-area tables of a plane and its square, shape (H+1, W+1)."""

    sum: np.ndarray
    sum_sq: np.ndarray


def integral_tables(plane: np.ndarray) -> IntegralTables:
    plane = np.asarray(plane, dtype=np.float64)
    h, w = plane.shape
    t = np.zeros((h + 1, w + 1), dtype=np.float64)
    t2 = np.zeros((h + 1, w + 1), dtype=np.float64)
    t[1:, 1:] = plane.cumsum(axis=0).cumsum(axis=1)
    t2[1:, 1:] = (plane * plane).cumsum(axis=0).cumsum(axis=1)
    return IntegralTables(sum=t, sum_sq=t2)


def rect_sum(table: np.ndarray, r0: int, c0: int, r1: int, c1: int) -> float:
    """Sum over the half-open rectangle [r0, r1) x [c0, c1)."""
    return table[r1, c1] - table[r0, c1] - table[r1, c0] + table[r0, c0]


def local_sigma(plane: np.ndarray, window: int = DEFAULT_WINDOW) -> np.ndarray:
    """Population std of each n x n neighborhood, same shape as the input.

    Edges are handled by symmetric reflection padding. The variance is
    clamped at zero before the square root, and windows whose min and
    max coincide (exactly constant content) are forced to sigma 0, since
    the summed-squares route leaves ~1e-8 cancellation residue there.
    """
    if window % 2 == 0:
        raise EvenWindowError(window)
    if window < 3:
        raise ValueError(f"window size must be >= 3, got {window}")
    plane = np.asarray(plane, dtype=np.float64)
    r = window // 2
    padded = np.pad(plane, r, mode="symmetric")
    tables = integral_tables(padded)
    n = window
    t, t2 = tables.sum, tables.sum_sq
    s = t[n:, n:] - t[:-n, n:] - t[n:, :-n] + t[:-n, :-n]
    s2 = t2[n:, n:] - t2[:-n, n:] - t2[n:, :-n] + t2[:-n, :-n]
    area = float(n * n)
    mean = s / area
    var = np.maximum(s2 / area - mean * mean, 0.0)
    lo = ndimage.minimum_filter(plane, size=n, mode="reflect")
    hi = ndimage.maximum_filter(plane, size=n, mode="reflect")
    var[lo == hi] = 0.0
    return np.sqrt(var)


def texture_distance_abs(sx: np.ndarray, sy: np.ndarray) -> DistanceMap:
    d = (sx - sy) ** 2
    return DistanceMap(values=d, kind="abs_d")


def texture_distance_rel(sx: np.ndarray, sy: np.ndarray) -> DistanceMap:
    """(sx - sy)^2 / (2 sx sy); the largest float64 where the product is 0."""
    prod = 2.0 * sx * sy
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.where(prod > 0.0, (sx - sy) ** 2 / prod, np.finfo(np.float64).max)
    return DistanceMap(values=d, kind="rel_d")


def texture_similarity(
    sx: np.ndarray,
    sy: np.ndarray,
    c: float = DEFAULT_C,
    sigma_floor: float = DEFAULT_SIGMA_FLOOR,
) -> DistanceMap:
    """Stabilized similarity 2 sx sy / (sx^2 + sy^2 + C) in [0, 1].

    Pixels where both sigmas sit below sigma_floor carry no texture
    evidence either way and are assigned similarity 1.0 exactly. With
    c == 0 the ratio is undefined wherever sx * sy == 0 outside that
    guard, which raises NonPositiveCError; c < 0 is rejected outright.
    """
    if c < 0.0:
        raise ValueError(f"stabilizer must be >= 0, got {c}")
    guard = (sx < sigma_floor) & (sy < sigma_floor)
    denom = sx * sx + sy * sy + c
    if c == 0.0:
        if np.any((sx * sy == 0.0) & ~guard):
            raise NonPositiveCError(
                "c=0 leaves the similarity undefined where one sigma is zero"
            )
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.where(denom > 0.0, 2.0 * sx * sy / denom, 0.0)
    d = np.where(guard, 1.0, d)
    return DistanceMap(values=d, kind="similarity_D")
