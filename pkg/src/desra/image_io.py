"""Image, label-map, mask, and manifest I/O.

All loaders are pure and return immutable-by-convention numpy data:

* RGB images  -> RgbImage (float64 samples in [0, 1] plus source bit depth)
* label maps  -> (H, W) uint8 array of class indices
* masks       -> (H, W) uint8 array with values in {0, 1} (1 = artifact)

Only PNG is supported: 8- or 16-bit, 1 or 3 channels for images, 8-bit
single-channel for label maps and masks. Mask PNGs are strictly {0, 255}.
"""

import json
import os
from dataclasses import dataclass

import cv2
import numpy as np

from .errors import (
    ClassOutOfRangeError,
    CorruptDataError,
    DimensionMismatchError,
    DuplicateIdError,
    MissingFileError,
    NonBinaryValueError,
    ParseError,
    UnsupportedFormatError,
    WriteError,
)

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"

NUM_CLASSES = 150


@dataclass(frozen=True)
class RgbImage:
    """H x W x 3 image with samples normalized to [0, 1].

    bit_depth records whether the source PNG was 8- or 16-bit so outputs
    derived from this image can be written without precision change.
    """

    samples: np.ndarray
    bit_depth: int

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def width(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class ManifestRecord:
    """One batch entry: paths are absolute after manifest resolution."""

    id: str
    mse: str
    gan: str
    label: str
    gt_mask: str | None = None
    lr: str | None = None


def _read_png_array(path: str) -> np.ndarray:
    """Decode a PNG with cv2, enforcing existence / signature / decodability."""
    if not os.path.isfile(path):
        raise MissingFileError(f"no such file: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(len(PNG_SIGNATURE))
    if magic != PNG_SIGNATURE:
        raise UnsupportedFormatError(f"not a PNG file: {path}")
    arr = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise CorruptDataError(f"failed to decode PNG: {path}")
    return arr


def _bit_depth_of(arr: np.ndarray, path: str) -> tuple[int, float]:
    if arr.dtype == np.uint8:
        return 8, 255.0
    if arr.dtype == np.uint16:
        return 16, 65535.0
    raise UnsupportedFormatError(f"unsupported sample type {arr.dtype}: {path}")


def load_rgb(path: str) -> RgbImage:
    """Load an 8/16-bit PNG as an RgbImage.

    Grayscale files are replicated to 3 channels; samples are divided by the
    bit-depth maximum (255 or 65535). Alpha channels are rejected.
    """
    arr = _read_png_array(path)
    depth, maxv = _bit_depth_of(arr, path)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    elif arr.ndim == 3 and arr.shape[2] == 3:
        arr = arr[:, :, ::-1]  # cv2 decodes BGR
    else:
        raise UnsupportedFormatError(
            f"expected 1 or 3 channels, got shape {arr.shape}: {path}"
        )
    samples = arr.astype(np.float64) / maxv
    return RgbImage(samples=samples, bit_depth=depth)


def save_rgb(img: RgbImage, path: str) -> None:
    """Write an RgbImage as PNG at its recorded bit depth."""
    maxv = 255.0 if img.bit_depth == 8 else 65535.0
    dtype = np.uint8 if img.bit_depth == 8 else np.uint16
    arr = np.rint(img.samples * maxv).astype(dtype)
    if not cv2.imwrite(path, arr[:, :, ::-1]):
        raise WriteError(f"failed to write PNG: {path}")


def to_luma(img: RgbImage) -> np.ndarray:
    """BT.601 luma plane: (299 R + 587 G + 114 B) / 1000, in [0, 1]."""
    s = img.samples
    return (299.0 * s[:, :, 0] + 587.0 * s[:, :, 1] + 114.0 * s[:, :, 2]) / 1000.0


def load_label_map(path: str, classes: int = NUM_CLASSES) -> np.ndarray:
    """Load an 8-bit single-channel PNG of class indices in [0, classes)."""
    arr = _read_png_array(path)
    if arr.dtype != np.uint8:
        raise UnsupportedFormatError(f"label map must be 8-bit: {path}")
    if arr.ndim != 2:
        raise UnsupportedFormatError(f"label map must be single-channel: {path}")
    if arr.max(initial=0) >= classes:
        pos = np.argwhere(arr >= classes)[0]
        raise ClassOutOfRangeError(int(arr[pos[0], pos[1]]), (int(pos[0]), int(pos[1])))
    return arr


def load_mask(path: str) -> np.ndarray:
    """Load an 8-bit {0,255} PNG as a {0,1} uint8 mask (255 -> 1)."""
    arr = _read_png_array(path)
    if arr.dtype != np.uint8:
        raise UnsupportedFormatError(f"mask must be 8-bit: {path}")
    if arr.ndim != 2:
        raise UnsupportedFormatError(f"mask must be single-channel: {path}")
    bad = (arr != 0) & (arr != 255)
    if bad.any():
        pos = np.argwhere(bad)[0]
        raise NonBinaryValueError(int(arr[pos[0], pos[1]]), (int(pos[0]), int(pos[1])))
    return (arr == 255).astype(np.uint8)


def save_mask(mask: np.ndarray, path: str) -> None:
    """Write a {0,1} mask as an 8-bit {0,255} PNG (exact inverse of load_mask)."""
    mask = np.asarray(mask)
    if not np.isin(mask, (0, 1)).all():
        raise ValueError("mask values must be 0 or 1")
    if not cv2.imwrite(path, (mask * np.uint8(255)).astype(np.uint8)):
        raise WriteError(f"failed to write PNG: {path}")


def save_plane_16bit(values: np.ndarray, path: str) -> None:
    """Debug dump of a real-valued map as 16-bit grayscale.

    Pixel value = round(65535 * clamp(v, 0, 1)).
    """
    arr = np.rint(65535.0 * np.clip(values, 0.0, 1.0)).astype(np.uint16)
    if not cv2.imwrite(path, arr):
        raise WriteError(f"failed to write PNG: {path}")


def read_manifest(path: str) -> list[ManifestRecord]:
    """Read a JSON-Lines manifest of records.

    Each non-blank line is an object with keys id, mse, gan, label and
    optional gt_mask, lr. Relative paths are resolved against the manifest
    file's directory. Duplicate ids are rejected.
    """
    if not os.path.isfile(path):
        raise MissingFileError(f"no such manifest: {path}")
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p: str | None) -> str | None:
        if p is None:
            return None
        return p if os.path.isabs(p) else os.path.join(base, p)

    records: list[ManifestRecord] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise ParseError(f"{path}:{lineno}: record must be a JSON object")
            missing = [k for k in ("id", "mse", "gan", "label") if k not in obj]
            if missing:
                raise ParseError(f"{path}:{lineno}: missing keys {missing}")
            rid = str(obj["id"])
            if rid in seen:
                raise DuplicateIdError(f"{path}:{lineno}: duplicate id {rid!r}")
            seen.add(rid)
            records.append(
                ManifestRecord(
                    id=rid,
                    mse=resolve(str(obj["mse"])),
                    gan=resolve(str(obj["gan"])),
                    label=resolve(str(obj["label"])),
                    gt_mask=resolve(obj.get("gt_mask")),
                    lr=resolve(obj.get("lr")),
                )
            )
    return records


def load_record(
    record: ManifestRecord, classes: int = NUM_CLASSES, with_gt: bool = False
):
    """Load a record's rasters and enforce dimension agreement.

    Returns (mse, gan, labels) or (mse, gan, labels, gt_mask) with with_gt.
    """
    mse = load_rgb(record.mse)
    gan = load_rgb(record.gan)
    labels = load_label_map(record.label, classes=classes)
    shapes = {mse.samples.shape[:2], gan.samples.shape[:2], labels.shape}
    if with_gt:
        if record.gt_mask is None:
            raise MissingFileError(f"record {record.id!r} has no gt_mask path")
        gt = load_mask(record.gt_mask)
        shapes.add(gt.shape)
    if len(shapes) != 1:
        raise DimensionMismatchError(
            f"record {record.id!r}: images disagree on dimensions {sorted(shapes)}"
        )
    if with_gt:
        return mse, gan, labels, gt
    return mse, gan, labels
