"""Shared builders for synthetic detection corpora.

The canonical fixture is a smooth horizontal ramp (local sigma below the
textureless floor, so the background never counts as texture evidence)
with uniform noise injected into known rectangles of one or both images.
Everything is written as 16-bit PNG so quantization stays far below the
sigma floor.
"""

import json
import os

import cv2
import numpy as np

from desra.image_io import RgbImage, save_mask, save_rgb

RAMP_LO = 0.30
RAMP_SLOPE = 2.35e-4  # 11x11 sigma of the gradient is slope * sqrt(10), under 1e-3


def ramp_plane(h: int, w: int, lo: float = RAMP_LO, slope: float = RAMP_SLOPE) -> np.ndarray:
    """Horizontal gradient whose 11x11 local sigma stays under the 1e-3 floor."""
    row = lo + slope * np.arange(w)
    return np.repeat(row[None, :], h, axis=0)


def to_rgb(plane: np.ndarray) -> np.ndarray:
    return np.repeat(plane[:, :, None], 3, axis=2)


def add_noise_rect(img: np.ndarray, rect, amplitude: float, rng) -> np.ndarray:
    """Add zero-mean uniform noise of the given peak-to-peak amplitude."""
    r0, c0, h, w = rect
    out = img.copy()
    noise = rng.uniform(-amplitude / 2.0, amplitude / 2.0, size=(h, w, 3))
    out[r0 : r0 + h, c0 : c0 + w] += noise
    return np.clip(out, 0.0, 1.0)


def rect_mask(shape, rect) -> np.ndarray:
    r0, c0, h, w = rect
    mask = np.zeros(shape, dtype=np.uint8)
    mask[r0 : r0 + h, c0 : c0 + w] = 1
    return mask


def write_record(
    out_dir,
    rid: str,
    mse: np.ndarray,
    gan: np.ndarray,
    labels: np.ndarray = None,
    gt: np.ndarray = None,
    bit_depth: int = 16,
) -> dict:
    """Write one record's rasters into out_dir and return its manifest row."""
    os.makedirs(out_dir, exist_ok=True)
    h, w = mse.shape[:2]
    if labels is None:
        labels = np.zeros((h, w), dtype=np.uint8)
    save_rgb(RgbImage(mse, bit_depth), os.path.join(out_dir, f"{rid}_mse.png"))
    save_rgb(RgbImage(gan, bit_depth), os.path.join(out_dir, f"{rid}_gan.png"))
    cv2.imwrite(os.path.join(out_dir, f"{rid}_label.png"), labels)
    row = {
        "id": rid,
        "mse": f"{rid}_mse.png",
        "gan": f"{rid}_gan.png",
        "label": f"{rid}_label.png",
    }
    if gt is not None:
        save_mask(gt, os.path.join(out_dir, f"{rid}_gt.png"))
        row["gt_mask"] = f"{rid}_gt.png"
    return row


def write_manifest(out_dir, rows: list, name: str = "manifest.jsonl") -> str:
    path = os.path.join(out_dir, name)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return path


def artifact_record(out_dir, rid: str, h=512, w=512, rect=(208, 208, 96, 96),
                    amplitude=0.3, seed=0) -> dict:
    """Standard detection fixture: noise in the GAN rendition only."""
    rng = np.random.default_rng(seed)
    mse = to_rgb(ramp_plane(h, w))
    gan = add_noise_rect(mse, rect, amplitude, rng)
    gt = rect_mask((h, w), rect)
    return write_record(out_dir, rid, mse, gan, gt=gt)
