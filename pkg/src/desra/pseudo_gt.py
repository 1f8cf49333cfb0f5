"""Pseudo ground-truth compositing.

Flagged pixels are replaced wholesale by the smoother rendition:

    out = mask * mse + (1 - mask) * gan

The swap is binary per pixel, no feathering, so the composite stays
bit-exact with respect to its two sources.
"""

import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, MissingMaskError, WriteError
from .image_io import ManifestRecord, RgbImage, save_rgb


@dataclass(frozen=True)
class PseudoGtRecord:
    id: str
    lr_path: str | None
    pseudo_gt_path: str
    mask_popcount: int
    replaced_fraction: float


def composite(gan: RgbImage, mse: RgbImage, mask: np.ndarray) -> RgbImage:
    """Splice mse over gan where mask == 1; keeps gan's bit depth."""
    if gan.samples.shape != mse.samples.shape:
        raise DimensionMismatchError(
            f"image shapes differ: {gan.samples.shape} vs {mse.samples.shape}"
        )
    if mask.shape != gan.samples.shape[:2]:
        raise DimensionMismatchError(
            f"mask shape {mask.shape} != image shape {gan.samples.shape[:2]}"
        )
    out = np.where(mask[:, :, None].astype(bool), mse.samples, gan.samples)
    return RgbImage(samples=out, bit_depth=gan.bit_depth)


def emit_training_manifest(
    entries: list,
    out_dir: str,
    loader=None,
) -> list[PseudoGtRecord]:
    """Write composites plus a pseudo_gt.jsonl manifest into out_dir.

    entries is a list of (ManifestRecord, mask) where mask is the final
    {0,1} detection for that record, or None if detection failed; a None
    mask aborts the whole emission (the training manifest must have
    exactly one line per input record). loader maps a ManifestRecord to
    (mse, gan) RgbImages and defaults to reading the manifest paths.

    Records without an lr path are still emitted, with "lr": null; a
    single summary warning goes to stderr.
    """
    if loader is None:
        from .image_io import load_rgb

        def loader(rec: ManifestRecord):
            return load_rgb(rec.mse), load_rgb(rec.gan)

    for rec, mask in entries:
        if mask is None:
            raise MissingMaskError(f"record {rec.id!r} has no detection mask")

    os.makedirs(out_dir, exist_ok=True)
    results: list[PseudoGtRecord] = []
    missing_lr = 0
    manifest_path = os.path.join(out_dir, "pseudo_gt.jsonl")
    try:
        fh = open(manifest_path, "w", encoding="utf-8")
    except OSError as exc:
        raise WriteError(f"failed to write manifest: {manifest_path}") from exc
    with fh:
        for rec, mask in entries:
            try:
                mse, gan = loader(rec)
                out = composite(gan, mse, mask)
            except DimensionMismatchError as exc:
                raise DimensionMismatchError(f"record {rec.id!r}: {exc}") from exc
            png_name = f"{rec.id}_pseudo_gt.png"
            save_rgb(out, os.path.join(out_dir, png_name))
            pop = int(mask.sum())
            frac = pop / mask.size
            if rec.lr is None:
                missing_lr += 1
            results.append(
                PseudoGtRecord(
                    id=rec.id,
                    lr_path=rec.lr,
                    pseudo_gt_path=png_name,
                    mask_popcount=pop,
                    replaced_fraction=frac,
                )
            )
            line = {
                "id": rec.id,
                "lr": rec.lr,
                "pseudo_gt": png_name,
                "replaced_fraction": frac,
            }
            fh.write(json.dumps(line) + "\n")
    if missing_lr:
        print(
            f"warning: {missing_lr} record(s) lack an lr path; wrote null",
            file=sys.stderr,
        )
    return results
