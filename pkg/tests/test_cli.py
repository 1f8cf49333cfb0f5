import json
import os

import numpy as np
import pytest

from conftest import (
    add_noise_rect,
    artifact_record,
    ramp_plane,
    rect_mask,
    to_rgb,
    write_manifest,
    write_record,
)
from desra.calibration import load_weights
from desra.cli import main
from desra.image_io import load_mask, load_rgb, save_mask


def small_record(out_dir, rid, seed=0, rect=(16, 16, 32, 32), h=64, w=64,
                 amplitude=0.3, labels=None):
    rng = np.random.default_rng(seed)
    mse = to_rgb(ramp_plane(h, w))
    gan = add_noise_rect(mse, rect, amplitude, rng)
    gt = rect_mask((h, w), rect)
    return write_record(out_dir, rid, mse, gan, labels=labels, gt=gt)


def small_corpus(out_dir, n=3):
    rows = [small_record(out_dir, f"r{i}", seed=100 + i) for i in range(n)]
    return write_manifest(out_dir, rows)


def read_jsonl(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


# ------------------------------------------------------------------- help

def run_help(argv, capsys):
    with pytest.raises(SystemExit) as exit_info:
        main(argv + ["--help"])
    assert exit_info.value.code == 0
    # argparse wraps help text at the terminal width, which can split a
    # "(default 300)" across lines; collapse whitespace before matching.
    return " ".join(capsys.readouterr().out.split())


def test_help_lists_true_defaults(capsys):
    detect_help = run_help(["detect"], capsys)
    assert "default 11" in detect_help  # window
    assert "default 0.7" in detect_help  # threshold
    assert "default 5" in detect_help  # SE sizes
    assert "default 300" in detect_help  # min area
    assert "default 150" in detect_help  # classes
    calibrate_help = run_help(["calibrate"], capsys)
    assert "default 85" in calibrate_help  # percentile
    assert "default 150" in calibrate_help
    evaluate_help = run_help(["evaluate"], capsys)
    assert "default 0.5" in evaluate_help  # region overlap p


# -------------------------------------------------------------- calibrate

def test_calibrate_writes_weights(tmp_path):
    manifest = small_corpus(str(tmp_path))
    out = str(tmp_path / "weights.json")
    assert main(["calibrate", "--manifest", manifest, "--out", out, "--jobs", "1"]) == 0
    payload = json.load(open(out))
    assert payload["schema"] == "desra-weights/1"
    assert payload["percentile"] == 85.0
    assert len(payload["weights"]) == 150
    table = load_weights(out)
    assert table.seen[0]  # class 0 is present in the corpus
    assert not table.seen[5]


def test_calibrate_empty_manifest_exits_2(tmp_path, capsys):
    manifest = write_manifest(str(tmp_path), [])
    out = str(tmp_path / "w.json")
    assert main(["calibrate", "--manifest", manifest, "--out", out]) == 2
    assert "no records" in capsys.readouterr().err


def test_calibrate_fails_fast_on_bad_record(tmp_path, capsys):
    manifest = small_corpus(str(tmp_path))
    os.remove(str(tmp_path / "r1_gan.png"))
    out = str(tmp_path / "w.json")
    code = main(["calibrate", "--manifest", manifest, "--out", out, "--jobs", "1"])
    assert code == 2
    assert "r1" in capsys.readouterr().err
    assert not os.path.exists(out)


def test_calibrate_jobs_do_not_change_weights(tmp_path):
    manifest = small_corpus(str(tmp_path), n=4)
    out1 = str(tmp_path / "w1.json")
    out2 = str(tmp_path / "w2.json")
    assert main(["calibrate", "--manifest", manifest, "--out", out1, "--jobs", "1"]) == 0
    assert main(["calibrate", "--manifest", manifest, "--out", out2, "--jobs", "3"]) == 0
    assert open(out1, "rb").read() == open(out2, "rb").read()


# ----------------------------------------------------------------- detect

def test_detect_outputs_and_manifest(tmp_path):
    manifest = small_corpus(str(tmp_path))
    out = str(tmp_path / "det")
    assert main(["detect", "--manifest", manifest, "--out", out, "--jobs", "1"]) == 0
    lines = read_jsonl(os.path.join(out, "detection.jsonl"))
    echo, rows = lines[0], lines[1:]
    assert echo["config"]["window"] == 11
    assert echo["config"]["threshold"] == 0.7
    assert len(rows) == 3
    for i, row in enumerate(rows):
        assert row["id"] == f"r{i}"
        assert row["mask"] == f"r{i}_mask.png"  # relative to the output dir
        mask = load_mask(os.path.join(out, row["mask"]))
        assert row["artifact_fraction"] == mask.sum() / mask.size
        assert row["regions"] == 1
        assert os.path.exists(os.path.join(out, row["overlay"]))


def test_detect_mask_quality_and_overlay_blend(tmp_path):
    row = small_record(str(tmp_path), "solo", seed=200)
    manifest = write_manifest(str(tmp_path), [row])
    out = str(tmp_path / "det")
    assert main(["detect", "--manifest", manifest, "--out", out, "--jobs", "1"]) == 0
    mask = load_mask(os.path.join(out, "solo_mask.png"))
    gt = load_mask(str(tmp_path / "solo_gt.png"))
    inter = np.logical_and(mask, gt).sum()
    union = np.logical_or(mask, gt).sum()
    # The local window smears the noisy rect outward by (window - 1) / 2
    # pixels per side, so the best achievable mask is GT plus a 5-px halo:
    # a 32x32 rect becomes at most 42x42, bounding IoU by 1024/1764.
    assert inter == gt.sum()  # every GT pixel flagged
    assert union <= 42 * 42  # no spill beyond the halo
    assert inter / union > 0.55

    overlay = load_rgb(os.path.join(out, "solo_overlay.png"))
    gan = load_rgb(str(tmp_path / "solo_gan.png"))
    off = np.argwhere(mask == 0)[0]
    assert np.array_equal(overlay.samples[off[0], off[1]], gan.samples[off[0], off[1]])
    on = np.argwhere(mask == 1)[0]
    alpha = 128.0 / 255.0
    blended = (1.0 - alpha) * gan.samples[on[0], on[1]] + alpha * np.array([1.0, 0.0, 0.0])
    quantized = np.rint(blended * 65535.0) / 65535.0
    assert np.max(np.abs(overlay.samples[on[0], on[1]] - quantized)) < 1e-9


def test_detect_no_overlay_and_dump_maps(tmp_path):
    manifest = small_corpus(str(tmp_path), n=1)
    out = str(tmp_path / "det")
    code = main(
        ["detect", "--manifest", manifest, "--out", out, "--jobs", "1",
         "--no-overlay", "--dump-maps"]
    )
    assert code == 0
    assert not os.path.exists(os.path.join(out, "r0_overlay.png"))
    assert os.path.exists(os.path.join(out, "r0_dmap.png"))
    rows = read_jsonl(os.path.join(out, "detection.jsonl"))[1:]
    assert rows[0]["overlay"] is None


def test_detect_partial_failure_exit_1(tmp_path, capsys):
    manifest = small_corpus(str(tmp_path))
    os.remove(str(tmp_path / "r1_mse.png"))
    out = str(tmp_path / "det")
    assert main(["detect", "--manifest", manifest, "--out", out, "--jobs", "1"]) == 1
    err = capsys.readouterr().err
    assert "r1 FAILED" in err
    rows = read_jsonl(os.path.join(out, "detection.jsonl"))[1:]
    assert [row["id"] for row in rows] == ["r0", "r2"]


def test_detect_byte_identical_across_jobs(tmp_path):
    manifest = small_corpus(str(tmp_path), n=4)
    out1 = str(tmp_path / "d1")
    out2 = str(tmp_path / "d2")
    assert main(["detect", "--manifest", manifest, "--out", out1, "--jobs", "1"]) == 0
    assert main(["detect", "--manifest", manifest, "--out", out2, "--jobs", "2"]) == 0
    names1 = sorted(os.listdir(out1))
    assert names1 == sorted(os.listdir(out2))
    for name in names1:
        a = open(os.path.join(out1, name), "rb").read()
        b = open(os.path.join(out2, name), "rb").read()
        assert a == b, name


def test_config_file_and_flag_precedence(tmp_path):
    manifest = small_corpus(str(tmp_path), n=1)
    cfg_file = tmp_path / "detect.cfg"
    cfg_file.write_text("# settings\nthreshold = 0.9\nmin_area = 10\n")

    out1 = str(tmp_path / "c1")
    assert main(["detect", "--manifest", manifest, "--out", out1, "--jobs", "1",
                 "--config", str(cfg_file)]) == 0
    echo = read_jsonl(os.path.join(out1, "detection.jsonl"))[0]["config"]
    assert echo["threshold"] == 0.9
    assert echo["min_area"] == 10

    out2 = str(tmp_path / "c2")
    assert main(["detect", "--manifest", manifest, "--out", out2, "--jobs", "1",
                 "--config", str(cfg_file), "--threshold", "0.3"]) == 0
    echo = read_jsonl(os.path.join(out2, "detection.jsonl"))[0]["config"]
    assert echo["threshold"] == 0.3  # flag beats file
    assert echo["min_area"] == 10  # file beats default


def test_config_file_unknown_key_exit_2(tmp_path, capsys):
    manifest = small_corpus(str(tmp_path), n=1)
    bad = tmp_path / "bad.cfg"
    bad.write_text("thresh = 0.9\n")
    code = main(["detect", "--manifest", manifest, "--out", str(tmp_path / "o"),
                 "--config", str(bad)])
    assert code == 2
    assert "thresh" in capsys.readouterr().err


# -------------------------------------------------------------- composite

def test_composite_flow(tmp_path):
    manifest = small_corpus(str(tmp_path), n=2)
    det = str(tmp_path / "det")
    assert main(["detect", "--manifest", manifest, "--out", det, "--jobs", "1"]) == 0
    out = str(tmp_path / "pgt")
    assert main(["composite", "--manifest", manifest, "--masks", det, "--out", out]) == 0
    rows = read_jsonl(os.path.join(out, "pseudo_gt.jsonl"))
    assert len(rows) == 2
    for i, row in enumerate(rows):
        rid = f"r{i}"
        assert row["id"] == rid
        mask = load_mask(os.path.join(det, f"{rid}_mask.png"))
        assert row["replaced_fraction"] == mask.sum() / mask.size
        pgt = load_rgb(os.path.join(out, row["pseudo_gt"]))
        mse = load_rgb(str(tmp_path / f"{rid}_mse.png"))
        gan = load_rgb(str(tmp_path / f"{rid}_gan.png"))
        sel = mask.astype(bool)
        assert np.array_equal(pgt.samples[sel], mse.samples[sel])
        assert np.array_equal(pgt.samples[~sel], gan.samples[~sel])


def test_composite_empty_mask_copies_gan(tmp_path):
    manifest = small_corpus(str(tmp_path), n=1)
    det = str(tmp_path / "det")
    os.makedirs(det)
    save_mask(np.zeros((64, 64), dtype=np.uint8), os.path.join(det, "r0_mask.png"))
    out = str(tmp_path / "pgt")
    assert main(["composite", "--manifest", manifest, "--masks", det, "--out", out]) == 0
    pgt = load_rgb(os.path.join(out, "r0_pseudo_gt.png"))
    gan = load_rgb(str(tmp_path / "r0_gan.png"))
    assert np.array_equal(pgt.samples, gan.samples)


def test_composite_missing_or_mismatched_mask_exit_2(tmp_path, capsys):
    manifest = small_corpus(str(tmp_path), n=1)
    out = str(tmp_path / "pgt")
    code = main(["composite", "--manifest", manifest, "--masks",
                 str(tmp_path / "nothing"), "--out", out])
    assert code == 2
    assert "r0" in capsys.readouterr().err

    det = str(tmp_path / "det")
    os.makedirs(det)
    save_mask(np.zeros((32, 32), dtype=np.uint8), os.path.join(det, "r0_mask.png"))
    code = main(["composite", "--manifest", manifest, "--masks", det, "--out", out])
    assert code == 2
    assert "r0" in capsys.readouterr().err


# --------------------------------------------------------------- evaluate

def test_evaluate_perfect_detection(tmp_path, capsys):
    manifest = small_corpus(str(tmp_path), n=2)
    det = str(tmp_path / "det")
    os.makedirs(det)
    for i in range(2):
        gt = load_mask(str(tmp_path / f"r{i}_gt.png"))
        save_mask(gt, os.path.join(det, f"r{i}_mask.png"))
    assert main(["evaluate", "--manifest", manifest, "--masks", det]) == 0
    payload = json.load(open(os.path.join(det, "eval.json")))
    assert payload["aggregate"]["mean_iou_percent"] == 100.0
    assert payload["aggregate"]["precision"] == 1.0
    assert payload["aggregate"]["recall"] == 1.0
    assert "removal_rate" not in payload["aggregate"]
    out = capsys.readouterr().out
    assert "IoU 100.00" in out


def test_evaluate_improved_with_empty_detections(tmp_path):
    manifest = small_corpus(str(tmp_path), n=2)
    det = str(tmp_path / "det")
    os.makedirs(det)
    for i in range(2):
        save_mask(np.zeros((64, 64), dtype=np.uint8), os.path.join(det, f"r{i}_mask.png"))
    report_path = str(tmp_path / "report.json")
    code = main(["evaluate", "--manifest", manifest, "--masks", det,
                 "--improved", "--out", report_path])
    assert code == 0
    payload = json.load(open(report_path))
    assert payload["aggregate"]["removal_rate"] == 1.0
    assert payload["aggregate"]["addition_rate"] is None
    assert payload["config"]["p"] == 0.5


def test_evaluate_missing_gt_exit_2(tmp_path, capsys):
    row = small_record(str(tmp_path), "r0")
    del row["gt_mask"]
    manifest = write_manifest(str(tmp_path), [row])
    det = str(tmp_path / "det")
    os.makedirs(det)
    save_mask(np.zeros((64, 64), dtype=np.uint8), os.path.join(det, "r0_mask.png"))
    assert main(["evaluate", "--manifest", manifest, "--masks", det]) == 2
    assert "r0" in capsys.readouterr().err


# ------------------------------------------------------------------ sweep

def test_sweep_single_threshold_matches_evaluate(tmp_path):
    manifest = small_corpus(str(tmp_path), n=2)
    det = str(tmp_path / "det")
    assert main(["detect", "--manifest", manifest, "--out", det, "--jobs", "1"]) == 0
    assert main(["evaluate", "--manifest", manifest, "--masks", det]) == 0
    eval_payload = json.load(open(os.path.join(det, "eval.json")))

    sw = str(tmp_path / "sw")
    assert main(["sweep", "--manifest", manifest, "--out", sw, "--jobs", "1",
                 "--thresholds", "0.7"]) == 0
    sweep_payload = json.load(open(os.path.join(sw, "sweep.json")))
    row = sweep_payload["rows"][0]
    agg = eval_payload["aggregate"]
    assert row["threshold"] == 0.7
    assert row["mean_iou_percent"] == agg["mean_iou_percent"]
    assert row["precision"] == agg["precision"]
    assert row["recall"] == agg["recall"]
    assert sweep_payload["best_threshold"] == 0.7


def test_sweep_marks_argmax_and_is_jobs_stable(tmp_path):
    manifest = small_corpus(str(tmp_path), n=3)
    s1 = str(tmp_path / "s1")
    s2 = str(tmp_path / "s2")
    argv = ["sweep", "--manifest", manifest, "--thresholds", "0.6,0.7,0.8,0.9"]
    assert main(argv + ["--out", s1, "--jobs", "1"]) == 0
    assert main(argv + ["--out", s2, "--jobs", "2"]) == 0
    assert open(os.path.join(s1, "sweep.json"), "rb").read() == open(
        os.path.join(s2, "sweep.json"), "rb").read()

    payload = json.load(open(os.path.join(s1, "sweep.json")))
    best_rows = [row for row in payload["rows"] if row["best"]]
    assert len(best_rows) == 1
    assert payload["best_threshold"] == best_rows[0]["threshold"]

    table = open(os.path.join(s1, "sweep.txt")).read().splitlines()
    assert len(table) == 5  # header + 4 rows
    assert sum(1 for line in table if line.startswith("*")) == 1


def test_sweep_requires_gt(tmp_path, capsys):
    row = small_record(str(tmp_path), "r0")
    del row["gt_mask"]
    manifest = write_manifest(str(tmp_path), [row])
    assert main(["sweep", "--manifest", manifest, "--out", str(tmp_path / "s")]) == 2
    assert "r0" in capsys.readouterr().err
