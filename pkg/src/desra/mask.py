"""Binarization and mask clean-up for the artifact detector.

Pipeline: similarity map -> class-relative threshold -> erode -> dilate
-> fill holes -> drop small components. All masks are (H, W) uint8 in
{0, 1} with 1 = artifact.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .calibration import AdjustmentTable
from .errors import DimensionMismatchError, EvenWindowError, WrongMapKindError
from .image_io import RgbImage, to_luma
from .stats import (
    DEFAULT_C,
    DEFAULT_SIGMA_FLOOR,
    DEFAULT_WINDOW,
    DistanceMap,
    local_sigma,
    texture_distance_abs,
    texture_distance_rel,
    texture_similarity,
)

DEFAULT_THRESHOLD = 0.7
DEFAULT_SE = 5
DEFAULT_MIN_AREA = 300

VARIANTS = ("full", "abs_d", "no_normalize", "no_semantics")
HOLE_FILL_MODES = ("flood", "closing3")


@dataclass(frozen=True)
class DetectionConfig:
    window: int = DEFAULT_WINDOW
    c: float = DEFAULT_C
    sigma_floor: float = DEFAULT_SIGMA_FLOOR
    threshold: float = DEFAULT_THRESHOLD
    erosion_se: int = DEFAULT_SE
    dilation_se: int = DEFAULT_SE
    fill_connectivity: int = 4
    component_connectivity: int = 8
    min_area: int = DEFAULT_MIN_AREA
    variant: str = "full"
    hole_fill: str = "flood"

    def __post_init__(self):
        if self.window % 2 == 0:
            raise EvenWindowError(self.window)
        for se in (self.erosion_se, self.dilation_se):
            if se < 1 or se % 2 == 0:
                raise ValueError(f"structuring element size must be odd >= 1, got {se}")
        if self.fill_connectivity not in (4, 8):
            raise ValueError(f"fill connectivity must be 4 or 8, got {self.fill_connectivity}")
        if self.component_connectivity not in (4, 8):
            raise ValueError(
                f"component connectivity must be 4 or 8, got {self.component_connectivity}"
            )
        if self.min_area < 0:
            raise ValueError(f"min area must be >= 0, got {self.min_area}")
        if not 0.0 < self.threshold <= 1.0:
            raise ValueError(f"threshold must be in (0, 1], got {self.threshold}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.hole_fill not in HOLE_FILL_MODES:
            raise ValueError(f"unknown hole fill mode {self.hole_fill!r}")


@dataclass(frozen=True)
class Region:
    id: int
    area: int
    bbox: tuple  # (row0, col0, row1, col1), half-open


@dataclass(frozen=True)
class RegionSet:
    labels: np.ndarray  # int32, 0 = background, regions numbered from 1
    regions: tuple


def _structure(connectivity: int) -> np.ndarray:
    if connectivity == 8:
        return np.ones((3, 3), dtype=bool)
    return ndimage.generate_binary_structure(2, 1)  # 4-connected cross


def binarize(
    d_map: DistanceMap,
    labels: np.ndarray,
    weights: AdjustmentTable,
    threshold: float = DEFAULT_THRESHOLD,
) -> np.ndarray:
    """Mark pixel (i,j) artifact iff D / A_label < threshold (ties keep)."""
    if d_map.kind != "similarity_D":
        raise WrongMapKindError(f"binarize needs a similarity_D map, got {d_map.kind!r}")
    if d_map.values.shape != labels.shape:
        raise DimensionMismatchError(
            f"map shape {d_map.values.shape} != label shape {labels.shape}"
        )
    per_pixel = weights.weights[labels.astype(np.intp)]
    return (d_map.values / per_pixel < threshold).astype(np.uint8)


def erode(mask: np.ndarray, se: int = DEFAULT_SE) -> np.ndarray:
    if se == 1:
        return mask.copy()
    out = ndimage.binary_erosion(
        mask.astype(bool), structure=np.ones((se, se), dtype=bool), border_value=0
    )
    return out.astype(np.uint8)


def dilate(mask: np.ndarray, se: int = DEFAULT_SE) -> np.ndarray:
    if se == 1:
        return mask.copy()
    out = ndimage.binary_dilation(
        mask.astype(bool), structure=np.ones((se, se), dtype=bool), border_value=0
    )
    return out.astype(np.uint8)


def fill_holes(mask: np.ndarray, connectivity: int = 4) -> np.ndarray:
    """Set to 1 every 0-region not connected to the border (background
    connectivity given; 4 pairs with 8-connected foreground)."""
    out = ndimage.binary_fill_holes(mask.astype(bool), structure=_structure(connectivity))
    return out.astype(np.uint8)


def close3(mask: np.ndarray) -> np.ndarray:
    """3x3 closing; cheaper stand-in for flood fill, only seals thin holes."""
    return erode(dilate(mask, 3), 3)


def remove_small(
    mask: np.ndarray, min_area: int = DEFAULT_MIN_AREA, connectivity: int = 8
) -> np.ndarray:
    """Drop connected components with area strictly below min_area."""
    if min_area <= 1:
        return mask.copy()
    labeled, count = ndimage.label(mask, structure=_structure(connectivity))
    if count == 0:
        return mask.copy()
    areas = np.bincount(labeled.ravel(), minlength=count + 1)
    keep = areas >= min_area
    keep[0] = False
    return keep[labeled].astype(np.uint8)


def connected_components(mask: np.ndarray, connectivity: int = 8) -> RegionSet:
    labeled, count = ndimage.label(mask, structure=_structure(connectivity))
    labeled = labeled.astype(np.int32)
    regions = []
    if count:
        areas = np.bincount(labeled.ravel(), minlength=count + 1)
        slices = ndimage.find_objects(labeled)
        for idx, sl in enumerate(slices, start=1):
            regions.append(
                Region(
                    id=idx,
                    area=int(areas[idx]),
                    bbox=(sl[0].start, sl[1].start, sl[0].stop, sl[1].stop),
                )
            )
    return RegionSet(labels=labeled, regions=tuple(regions))


def clean_mask(mask: np.ndarray, cfg: DetectionConfig) -> np.ndarray:
    """Erode -> dilate -> fill holes -> remove small, per config."""
    out = erode(mask, cfg.erosion_se)
    out = dilate(out, cfg.dilation_se)
    if cfg.hole_fill == "flood":
        out = fill_holes(out, cfg.fill_connectivity)
    else:
        out = close3(out)
    return remove_small(out, cfg.min_area, cfg.component_connectivity)


def similarity_map(mse: RgbImage, gan: RgbImage, cfg: DetectionConfig) -> DistanceMap:
    """Compare the two renditions per the configured variant.

    The result is always oriented as a similarity (higher = more alike):
    the abs_d variant is mapped through 1 - d / max(d), and no_normalize
    through 1 / (1 + d'), so binarize applies unchanged.
    """
    if mse.samples.shape != gan.samples.shape:
        raise DimensionMismatchError(
            f"image shapes differ: {mse.samples.shape} vs {gan.samples.shape}"
        )
    sx = local_sigma(to_luma(gan), cfg.window)
    sy = local_sigma(to_luma(mse), cfg.window)
    if cfg.variant in ("full", "no_semantics"):
        return texture_similarity(sx, sy, c=cfg.c, sigma_floor=cfg.sigma_floor)
    if cfg.variant == "abs_d":
        d = texture_distance_abs(sx, sy).values
        peak = d.max()
        values = np.ones_like(d) if peak == 0.0 else 1.0 - d / peak
        return DistanceMap(values=values, kind="similarity_D")
    d = texture_distance_rel(sx, sy).values
    with np.errstate(over="ignore"):
        values = 1.0 / (1.0 + d)
    return DistanceMap(values=values, kind="similarity_D")


def mask_from_map(
    d_map: DistanceMap,
    labels: np.ndarray,
    weights: AdjustmentTable,
    cfg: DetectionConfig,
    threshold: float | None = None,
) -> np.ndarray:
    thr = cfg.threshold if threshold is None else threshold
    raw = binarize(d_map, labels, weights, thr)
    return clean_mask(raw, cfg)


def detect(
    mse: RgbImage,
    gan: RgbImage,
    labels: np.ndarray,
    weights: AdjustmentTable,
    cfg: DetectionConfig = DetectionConfig(),
) -> np.ndarray:
    """Full detector: similarity map, class-relative threshold, clean-up."""
    if cfg.variant == "no_semantics":
        weights = AdjustmentTable.uniform(weights.weights.size, c_used=cfg.c)
    d_map = similarity_map(mse, gan, cfg)
    return mask_from_map(d_map, labels, weights, cfg)


def config_echo(cfg: DetectionConfig) -> dict:
    """Flat dict of the effective settings, for embedding in outputs."""
    return {
        "window": cfg.window,
        "c": cfg.c,
        "sigma_floor": cfg.sigma_floor,
        "threshold": cfg.threshold,
        "erosion_se": cfg.erosion_se,
        "dilation_se": cfg.dilation_se,
        "fill_connectivity": cfg.fill_connectivity,
        "component_connectivity": cfg.component_connectivity,
        "min_area": cfg.min_area,
        "variant": cfg.variant,
        "hole_fill": cfg.hole_fill,
    }


def with_overrides(cfg: DetectionConfig, **overrides) -> DetectionConfig:
    """New config with the given fields replaced (validation re-runs)."""
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
