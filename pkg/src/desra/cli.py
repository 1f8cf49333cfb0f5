"""Command-line driver: calibrate, detect, composite, evaluate, sweep.

Batch work runs over a manifest (JSON Lines) through a process pool;
each worker owns one record end-to-end and the parent writes result
lines in input order, so outputs are byte-identical for any --jobs
value. Settings resolve as CLI flag > config file > built-in default,
and the effective configuration is echoed into every output report.
"""

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import calibration, evaluation
from . import mask as mask_mod
from . import pseudo_gt
from .errors import DesraError, MissingFileError, MissingGtMaskError, ParseError
from .image_io import (
    RgbImage,
    load_mask,
    load_record,
    read_manifest,
    save_mask,
    save_plane_16bit,
    save_rgb,
    to_luma,
)
from .stats import local_sigma, texture_similarity

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2

DEFAULT_OVERLAY_COLOR = (255, 0, 0, 128)

_CONFIG_KEYS = {
    "window": int,
    "c": float,
    "sigma_floor": float,
    "threshold": float,
    "erosion_se": int,
    "dilation_se": int,
    "fill_connectivity": int,
    "component_connectivity": int,
    "min_area": int,
    "variant": str,
    "hole_fill": str,
}


def load_config_file(path: str) -> dict:
    """Parse a flat key=value file ('#' comments, blank lines ignored)."""
    if not os.path.isfile(path):
        raise MissingFileError(f"no such config file: {path}")
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            if "=" not in text:
                raise ParseError(f"{path}:{lineno}: expected key=value")
            key, _, value = text.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in _CONFIG_KEYS:
                raise ParseError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                out[key] = _CONFIG_KEYS[key](value)
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: bad value for {key!r}") from exc
    return out


def build_config(args) -> mask_mod.DetectionConfig:
    """Resolve flag > config file > default into a DetectionConfig."""
    layers = {}
    if getattr(args, "config", None):
        layers.update(load_config_file(args.config))
    for key in _CONFIG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            layers[key] = value
    return mask_mod.DetectionConfig(**layers)


def _resolve_jobs(value) -> int:
    if value is None:
        return os.cpu_count() or 1
    if value < 1:
        raise ParseError(f"--jobs must be >= 1, got {value}")
    return value


def _run_pool(worker, items: list, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [worker(item) for item in items]
    chunk = max(1, len(items) // (jobs * 4))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(worker, items, chunksize=chunk))


def _load_weights_or_uniform(path, classes: int) -> calibration.AdjustmentTable:
    if path is None:
        return calibration.AdjustmentTable.uniform(classes)
    return calibration.load_weights(path)


# ---------------------------------------------------------------- calibrate

def _calibrate_worker(item):
    record, cfg, classes, histogram = item
    try:
        mse, gan, labels = load_record(record, classes=classes)
        sx = local_sigma(to_luma(gan), cfg.window)
        sy = local_sigma(to_luma(mse), cfg.window)
        d_map = texture_similarity(sx, sy, c=cfg.c, sigma_floor=cfg.sigma_floor)
        acc = calibration.ClassAccumulator(classes=classes, histogram=histogram)
        calibration.accumulate(acc, d_map, labels)
        return ("ok", record.id, acc)
    except (DesraError, OSError) as exc:
        return ("error", record.id, str(exc))


def cmd_calibrate(args) -> int:
    cfg = build_config(args)
    records = read_manifest(args.manifest)
    if not records:
        print("calibrate: no records in manifest", file=sys.stderr)
        return EXIT_CONFIG
    jobs = _resolve_jobs(args.jobs)
    items = [(rec, cfg, args.classes, args.histogram) for rec in records]
    merged = None
    for status, rid, payload in _run_pool(_calibrate_worker, items, jobs):
        if status == "error":
            print(f"calibrate: {rid} FAILED: {payload}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"calibrate: {rid} ok", file=sys.stderr)
        merged = payload if merged is None else calibration.merge(merged, payload)
    percentile = 85.0 if args.percentile is None else args.percentile
    table = calibration.finalize(
        merged, percentile=percentile, c_used=cfg.c, corpus_id=args.corpus_id
    )
    calibration.save_weights(table, args.out)
    print(f"calibrate: wrote {args.out} ({table.weights.size} classes)", file=sys.stderr)
    return EXIT_OK


# ------------------------------------------------------------------- detect

def _render_overlay(gan: RgbImage, m: np.ndarray, color) -> RgbImage:
    rgb = np.array(color[:3], dtype=np.float64) / 255.0
    alpha = color[3] / 255.0
    blend = alpha * m[:, :, None]
    samples = gan.samples * (1.0 - blend) + rgb[None, None, :] * blend
    return RgbImage(samples=samples, bit_depth=gan.bit_depth)


def _detect_worker(item):
    record, cfg, weights, out_dir, overlay_color, dump_maps = item
    try:
        classes = weights.weights.size
        mse, gan, labels = load_record(record, classes=classes)
        d_map = mask_mod.similarity_map(mse, gan, cfg)
        use = weights
        if cfg.variant == "no_semantics":
            use = calibration.AdjustmentTable.uniform(classes, c_used=cfg.c)
        m = mask_mod.mask_from_map(d_map, labels, use, cfg)
        mask_name = f"{record.id}_mask.png"
        save_mask(m, os.path.join(out_dir, mask_name))
        overlay_name = None
        if overlay_color is not None:
            overlay_name = f"{record.id}_overlay.png"
            save_rgb(
                _render_overlay(gan, m, overlay_color),
                os.path.join(out_dir, overlay_name),
            )
        if dump_maps:
            save_plane_16bit(d_map.values, os.path.join(out_dir, f"{record.id}_dmap.png"))
        regions = len(
            mask_mod.connected_components(m, cfg.component_connectivity).regions
        )
        fraction = float(m.sum()) / m.size
        return ("ok", record.id, mask_name, overlay_name, regions, fraction)
    except (DesraError, OSError) as exc:
        return ("error", record.id, str(exc))


def cmd_detect(args) -> int:
    cfg = build_config(args)
    records = read_manifest(args.manifest)
    if not records:
        print("detect: no records in manifest", file=sys.stderr)
        return EXIT_CONFIG
    weights = _load_weights_or_uniform(args.weights, args.classes)
    jobs = _resolve_jobs(args.jobs)
    os.makedirs(args.out, exist_ok=True)
    overlay_color = None if args.no_overlay else tuple(args.overlay_color)
    items = [
        (rec, cfg, weights, args.out, overlay_color, args.dump_maps) for rec in records
    ]
    results = _run_pool(_detect_worker, items, jobs)
    failures = 0
    with open(os.path.join(args.out, "detection.jsonl"), "w", encoding="utf-8") as fh:
        echo = {
            "config": mask_mod.config_echo(cfg),
            "weights": args.weights,
            "overlay": None if args.no_overlay else list(overlay_color),
        }
        fh.write(json.dumps(echo) + "\n")
        for result in results:
            if result[0] == "error":
                _, rid, message = result
                failures += 1
                print(f"detect: {rid} FAILED: {message}", file=sys.stderr)
                continue
            _, rid, mask_name, overlay_name, regions, fraction = result
            print(f"detect: {rid} ok (regions={regions})", file=sys.stderr)
            fh.write(
                json.dumps(
                    {
                        "id": rid,
                        "mask": mask_name,
                        "overlay": overlay_name,
                        "regions": regions,
                        "artifact_fraction": fraction,
                    }
                )
                + "\n"
            )
    return EXIT_PARTIAL if failures else EXIT_OK


# ---------------------------------------------------------------- composite

def cmd_composite(args) -> int:
    records = read_manifest(args.manifest)
    if not records:
        print("composite: no records in manifest", file=sys.stderr)
        return EXIT_CONFIG
    entries = []
    for rec in records:
        mask_path = os.path.join(args.masks, f"{rec.id}_mask.png")
        if not os.path.isfile(mask_path):
            print(f"composite: {rec.id} FAILED: no mask at {mask_path}", file=sys.stderr)
            return EXIT_CONFIG
        entries.append((rec, load_mask(mask_path)))
    results = pseudo_gt.emit_training_manifest(entries, args.out)
    for res in results:
        print(
            f"composite: {res.id} ok (replaced {res.replaced_fraction:.4f})",
            file=sys.stderr,
        )
    return EXIT_OK


# ----------------------------------------------------------------- evaluate

def _evaluate_pairs(records, masks_dir: str, p: float, connectivity: int):
    evals = []
    for rec in records:
        if rec.gt_mask is None:
            raise MissingGtMaskError(f"record {rec.id!r} has no gt_mask path")
        detected = load_mask(os.path.join(masks_dir, f"{rec.id}_mask.png"))
        gt = load_mask(rec.gt_mask)
        evals.append(
            evaluation.evaluate_pair(
                detected, gt, p=p, connectivity=connectivity, image_id=rec.id
            )
        )
    return evals


def _report_payload(report, improved: bool) -> dict:
    aggregate = {
        "mean_iou_percent": report.mean_iou_percent,
        "precision": report.precision,
        "recall": report.recall,
    }
    if improved:
        aggregate["removal_rate"] = report.removal_rate
        aggregate["addition_rate"] = report.addition_rate
    per_image = []
    for e in report.per_image:
        row = {
            "id": e.id,
            "iou": e.iou,
            "detected_regions": e.detected_regions,
            "correct_regions": e.correct_regions,
            "gt_regions": e.gt_regions,
            "recalled_regions": e.recalled_regions,
        }
        if improved:
            row["removed_regions"] = e.removed_regions
            row["added_regions"] = e.added_regions
        per_image.append(row)
    return {"config": report.config_echo, "aggregate": aggregate, "per_image": per_image}


def _format_rate(value) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def cmd_evaluate(args) -> int:
    records = read_manifest(args.manifest)
    if not records:
        print("evaluate: no records in manifest", file=sys.stderr)
        return EXIT_CONFIG
    p = 0.5 if args.p is None else args.p
    evals = _evaluate_pairs(records, args.masks, p, args.connectivity)
    echo = {"p": p, "connectivity": args.connectivity, "improved": args.improved}
    report = evaluation.aggregate(evals, config_echo=echo)
    out_path = args.out or os.path.join(args.masks, "eval.json")
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(_report_payload(report, args.improved), fh, indent=2)
        fh.write("\n")
    print(
        f"IoU {report.mean_iou_percent:.2f}  "
        f"Precision {_format_rate(report.precision)}  "
        f"Recall {_format_rate(report.recall)}"
    )
    if args.improved:
        print(
            f"Removal rate {_format_rate(report.removal_rate)}  "
            f"Addition rate {_format_rate(report.addition_rate)}"
        )
    print(f"evaluate: wrote {out_path}", file=sys.stderr)
    return EXIT_OK


# -------------------------------------------------------------------- sweep

def _sweep_map_worker(item):
    record, cfg, classes = item
    try:
        mse, gan, labels, gt = load_record(record, classes=classes, with_gt=True)
        d_map = mask_mod.similarity_map(mse, gan, cfg)
        return ("ok", record.id, d_map, labels, gt)
    except (DesraError, OSError) as exc:
        return ("error", record.id, str(exc))


def _parse_thresholds(text: str) -> list:
    try:
        values = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise ParseError(f"bad threshold list: {text!r}") from exc
    if not values:
        raise ParseError("threshold list is empty")
    return values


def cmd_sweep(args) -> int:
    cfg = build_config(args)
    records = read_manifest(args.manifest)
    if not records:
        print("sweep: no records in manifest", file=sys.stderr)
        return EXIT_CONFIG
    for rec in records:
        if rec.gt_mask is None:
            raise MissingGtMaskError(f"record {rec.id!r} has no gt_mask path")
    thresholds = _parse_thresholds(args.thresholds)
    p = 0.5 if args.p is None else args.p
    weights = _load_weights_or_uniform(args.weights, args.classes)
    if cfg.variant == "no_semantics":
        weights = calibration.AdjustmentTable.uniform(weights.weights.size, c_used=cfg.c)
    jobs = _resolve_jobs(args.jobs)
    items = [(rec, cfg, weights.weights.size) for rec in records]
    triples = []
    for result in _run_pool(_sweep_map_worker, items, jobs):
        if result[0] == "error":
            print(f"sweep: {result[1]} FAILED: {result[2]}", file=sys.stderr)
            return EXIT_CONFIG
        _, rid, d_map, labels, gt = result
        print(f"sweep: {rid} map ok", file=sys.stderr)
        triples.append((d_map, labels, gt))
    rows, best = evaluation.threshold_sweep(triples, weights, cfg, thresholds, p=p)
    os.makedirs(args.out, exist_ok=True)
    payload = {
        "config": mask_mod.config_echo(cfg),
        "p": p,
        "thresholds": thresholds,
        "rows": [
            {
                "threshold": row.threshold,
                "mean_iou_percent": row.mean_iou_percent,
                "precision": row.precision,
                "recall": row.recall,
                "precision_x_recall": row.product,
                "best": i == best,
            }
            for i, row in enumerate(rows)
        ],
        "best_threshold": None if best is None else rows[best].threshold,
    }
    with open(os.path.join(args.out, "sweep.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    lines = [
        f"  {'threshold':>9}  {'IoU':>7}  {'precision':>9}  {'recall':>9}  {'PxR':>9}"
    ]
    for i, row in enumerate(rows):
        marker = "*" if i == best else " "
        lines.append(
            f"{marker} {row.threshold:>9.3f}  {row.mean_iou_percent:>7.2f}  "
            f"{_format_rate(row.precision):>9}  {_format_rate(row.recall):>9}  "
            f"{_format_rate(row.product):>9}"
        )
    table_text = "\n".join(lines) + "\n"
    with open(os.path.join(args.out, "sweep.txt"), "w", encoding="utf-8") as fh:
        fh.write(table_text)
    print(table_text, end="")
    return EXIT_OK


# ------------------------------------------------------------------- parser

def _add_detection_flags(p: argparse.ArgumentParser, stats_only: bool = False):
    p.add_argument("--config", help="flat key=value settings file; flags override it")
    p.add_argument("--window", type=int, help="odd local-stats window size (default 11)")
    p.add_argument("--c", type=float, help="similarity stabilizer (default 9e-4)")
    p.add_argument(
        "--sigma-floor",
        dest="sigma_floor",
        type=float,
        help="both sigmas below this floor score similarity 1.0 (default 1e-3)",
    )
    if stats_only:
        return
    p.add_argument(
        "--threshold", type=float, help="flag pixels with D/A below this (default 0.7)"
    )
    p.add_argument(
        "--erosion-se",
        dest="erosion_se",
        type=int,
        help="odd square erosion size, SE (default 5)",
    )
    p.add_argument(
        "--dilation-se",
        dest="dilation_se",
        type=int,
        help="odd square dilation size, SE (default 5)",
    )
    p.add_argument(
        "--fill-connectivity",
        dest="fill_connectivity",
        type=int,
        choices=(4, 8),
        help="background connectivity for hole filling (default 4)",
    )
    p.add_argument(
        "--component-connectivity",
        dest="component_connectivity",
        type=int,
        choices=(4, 8),
        help="foreground connectivity for regions (default 8)",
    )
    p.add_argument(
        "--min-area",
        dest="min_area",
        type=int,
        help="drop components smaller than this many pixels (default 300)",
    )
    p.add_argument(
        "--variant",
        choices=mask_mod.VARIANTS,
        help="detector variant (default full)",
    )
    p.add_argument(
        "--hole-fill",
        dest="hole_fill",
        choices=mask_mod.HOLE_FILL_MODES,
        help="hole handling: flood fill or 3x3 closing (default flood)",
    )


def _parse_overlay_color(text: str):
    parts = [int(tok) for tok in text.split(",")]
    if len(parts) != 4 or not all(0 <= v <= 255 for v in parts):
        raise argparse.ArgumentTypeError("overlay color must be R,G,B,A in 0..255")
    return tuple(parts)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="desra",
        description="Detect GAN-inference artifacts by comparing paired "
        "super-resolution outputs, build pseudo ground truth, and score masks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="fit per-class similarity tolerances")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="weights JSON to write")
    p.add_argument(
        "--percentile",
        type=float,
        help="descending nearest-rank percentile (default 85)",
    )
    p.add_argument(
        "--classes", type=int, default=150, help="semantic class count (default 150)"
    )
    p.add_argument("--histogram", action="store_true", help="use 4096-bin histograms")
    p.add_argument("--corpus-id", dest="corpus_id", default="", help="tag stored in the weights file")
    p.add_argument("--jobs", type=int, help="worker processes (default: logical cores)")
    _add_detection_flags(p, stats_only=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("detect", help="write artifact masks for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument(
        "--weights", help="weights JSON from calibrate (default: uniform, every class 1.0)"
    )
    p.add_argument(
        "--classes",
        type=int,
        default=150,
        help="class count when no weights file is given (default 150)",
    )
    p.add_argument(
        "--overlay-color",
        dest="overlay_color",
        type=_parse_overlay_color,
        default=DEFAULT_OVERLAY_COLOR,
        help="R,G,B,A blend for overlays (default 255,0,0,128)",
    )
    p.add_argument("--no-overlay", dest="no_overlay", action="store_true")
    p.add_argument(
        "--dump-maps",
        dest="dump_maps",
        action="store_true",
        help="also write each similarity map as 16-bit PNG",
    )
    p.add_argument("--jobs", type=int, help="worker processes (default: logical cores)")
    _add_detection_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("composite", help="splice masked pixels into pseudo ground truth")
    p.add_argument("--manifest", required=True)
    p.add_argument("--masks", required=True, help="directory of <id>_mask.png files")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_composite)

    p = sub.add_parser("evaluate", help="score detection masks against ground truth")
    p.add_argument("--manifest", required=True)
    p.add_argument("--masks", required=True, help="directory of <id>_mask.png files")
    p.add_argument("--out", help="report JSON path (default <masks>/eval.json)")
    p.add_argument(
        "--p", type=float, help="strict region-overlap fraction (default 0.5)"
    )
    p.add_argument(
        "--connectivity", type=int, choices=(4, 8), default=8, help="region connectivity"
    )
    p.add_argument(
        "--improved",
        action="store_true",
        help="also report removal/addition rates against ground truth",
    )
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="re-score the detector across thresholds")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument(
        "--weights", help="weights JSON from calibrate (default: uniform, every class 1.0)"
    )
    p.add_argument(
        "--classes",
        type=int,
        default=150,
        help="class count when no weights file is given (default 150)",
    )
    p.add_argument(
        "--thresholds",
        default="0.6,0.7,0.8,0.9",
        help="comma-separated list (default 0.6,0.7,0.8,0.9)",
    )
    p.add_argument(
        "--p", type=float, help="strict region-overlap fraction (default 0.5)"
    )
    p.add_argument("--jobs", type=int, help="worker processes (default: logical cores)")
    _add_detection_flags(p)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DesraError as exc:
        print(f"{args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"{args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
