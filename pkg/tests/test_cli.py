import filecmp
import json
import os

import numpy as np
import pytest

from epkit import cli, fileio, gflasso, rpca, synth


def run(argv):
    return cli.main([str(a) for a in argv])


def test_synth_lowrank_sparse_round_trips_bit_exact(tmp_path):
    out = tmp_path / "b"
    assert run(["synth", "--generator", "lowrank_sparse", "--seed", "7",
                "--params", '{"d": 30, "t": 25, "rank": 3}', "--out", out]) == 0
    bundle = synth.gen_lowrank_sparse(30, 25, 3, 0.05, 5.0, seed=7)
    assert np.array_equal(fileio.read_matrix(out / "x.mat"), bundle.payload["x"])
    assert np.array_equal(
        fileio.read_matrix(out / "truth_sparse.mat"), bundle.ground_truth["sparse"]
    )


def test_synth_piecewise_round_trips_bit_exact(tmp_path):
    out = tmp_path / "b"
    assert run(["synth", "--generator", "piecewise", "--seed", "3", "--out", out]) == 0
    bundle = synth.gen_piecewise(8, 240, [40, 90, 150, 200], 2.0, 0.3, seed=3)
    assert np.array_equal(fileio.read_matrix(out / "x.mat"), bundle.payload["x"])
    meta = fileio.read_json(out / "meta.json")
    assert meta["change_points"] == [40, 90, 150, 200]


def test_synth_shifted_pair_round_trips_bit_exact(tmp_path):
    out = tmp_path / "b"
    assert run(["synth", "--generator", "shifted_pair", "--seed", "5",
                "--params", '{"dx": 0.5, "dy": -0.5}', "--out", out]) == 0
    bundle = synth.gen_shifted_pair(64, 0.5, -0.5, 2.0, seed=5)
    assert np.array_equal(fileio.read_pgm(out / "frame1.pgm"), bundle.payload["frame1"])
    assert np.array_equal(fileio.read_pgm(out / "frame2.pgm"), bundle.payload["frame2"])


def test_synth_unknown_generator_lists_names(tmp_path, capsys):
    assert run(["synth", "--generator", "nope", "--out", tmp_path / "x"]) == 2
    err = capsys.readouterr().err
    assert "driver_session" in err and "lowrank_sparse" in err


def test_rpca_cmd_matches_in_process(tmp_path):
    bundle = synth.gen_lowrank_sparse(40, 30, 3, 0.05, 5.0, seed=11)
    xpath = tmp_path / "x.mat"
    fileio.write_matrix(xpath, bundle.payload["x"])
    out = tmp_path / "out"
    assert run(["rpca", "--input", xpath, "--out", out]) == 0
    ref = rpca.decompose(bundle.payload["x"])
    assert np.array_equal(fileio.read_matrix(out / "low_rank.mat"), ref.low_rank)
    assert np.array_equal(fileio.read_matrix(out / "sparse.mat"), ref.sparse)
    summary = fileio.read_json(out / "rpca_summary.json")
    assert summary["iterations"] == ref.iterations
    assert summary["final_residual"] == ref.final_residual
    header, rows = fileio.read_csv(out / "outlier_energy.csv")
    energies = np.array([float(r[1]) for r in rows])
    assert np.array_equal(energies, np.linalg.norm(ref.sparse, axis=0))


def test_rpca_cmd_empty_frame_dir_exits_2(tmp_path, capsys):
    frames = tmp_path / "frames"
    frames.mkdir()
    assert run(["rpca", "--input", frames, "--out", tmp_path / "out"]) == 2


def test_rpca_cmd_constant_video_has_zero_outlier_energy(tmp_path):
    frames = tmp_path / "frames"
    frames.mkdir()
    for i in range(6):
        fileio.write_pgm(frames / f"f_{i:03d}.pgm", np.full((12, 16), 0.5))
    out = tmp_path / "out"
    assert run(["rpca", "--input", frames, "--out", out]) == 0
    _, rows = fileio.read_csv(out / "outlier_energy.csv")
    assert max(float(r[1]) for r in rows) <= 1e-6


def test_rpca_cmd_malformed_matrix_exits_2_with_offset(tmp_path, capsys):
    bad = tmp_path / "x.mat"
    bad.write_bytes(b"EPKMAT1\n4 4\nshort")
    assert run(["rpca", "--input", bad, "--out", tmp_path / "out"]) == 2
    assert "byte offset" in capsys.readouterr().err


def _piecewise_detections(tmp_path, seed=3):
    bundle = synth.gen_piecewise(8, 240, [40, 90, 150, 200], 2.0, 0.3, seed=seed)
    x = bundle.payload["x"]
    frames = []
    for t in range(x.shape[1]):
        joints = {}
        for row, (joint, axis) in enumerate(gflasso.ARM_SERIES):
            lo, hi = x[row].min(), x[row].max()
            span = hi - lo if hi > lo else 1.0
            coord = 0.1 + 0.8 * (x[row, t] - lo) / span  # per-row affine into [0.1, 0.9]
            cur = joints.get(joint, (0.0, 0.0, 1.0))
            joints[joint] = (coord, cur[1], 1.0) if axis == 0 else (cur[0], coord, 1.0)
        frames.append((synth.PoseFrame(frame_index=t, joints=joints), [], []))
    path = tmp_path / "detections.jsonl"
    fileio.write_detections(path, frames)
    return path, bundle.ground_truth["change_points"]


def test_segment_cmd_recovers_piecewise_boundaries(tmp_path):
    det, truth = _piecewise_detections(tmp_path)
    out = tmp_path / "out"
    assert run(["segment", "--detections", det, "--out", out]) == 0
    data = fileio.read_json(out / "change_points.json")
    found = data["sets"][0]["change_points"]
    assert len(found) == len(truth)
    for c in truth:
        assert any(abs(f - c) <= 2 for f in found)
    header, rows = fileio.read_csv(out / "groups.csv")
    assert header == ["frame", "group_t0"]
    assert len(rows) == 240
    assert (out / "strengths.svg").read_text().startswith("<svg")


def test_segment_cmd_two_thresholds_nest(tmp_path):
    det, _ = _piecewise_detections(tmp_path)
    out = tmp_path / "out"
    assert run([
        "segment", "--detections", det, "--threshold", "2.0", "--threshold", "0.5",
        "--out", out,
    ]) == 0
    data = fileio.read_json(out / "change_points.json")
    hi = set(data["sets"][0]["change_points"])
    lo = set(data["sets"][1]["change_points"])
    assert hi <= lo
    svg = (out / "strengths.svg").read_text()
    assert svg.count("stroke-dasharray") == 2


def test_segment_cmd_constant_stream_single_segment(tmp_path):
    frames = []
    for t in range(30):
        joints = {j: (0.4, 0.6, 1.0) for j in ("l_wrist", "r_wrist", "l_elbow", "r_elbow")}
        frames.append((synth.PoseFrame(frame_index=t, joints=joints), [], []))
    det = tmp_path / "d.jsonl"
    fileio.write_detections(det, frames)
    out = tmp_path / "out"
    assert run(["segment", "--detections", det, "--out", out]) == 0
    _, rows = fileio.read_csv(out / "groups.csv")
    assert {r[1] for r in rows} == {"0"}


def test_segment_cmd_missing_joint_exits_3(tmp_path, capsys):
    frames = [
        (synth.PoseFrame(frame_index=t, joints={"l_wrist": (0.1, 0.2, 1.0)}), [], [])
        for t in range(5)
    ]
    det = tmp_path / "d.jsonl"
    fileio.write_detections(det, frames)
    assert run(["segment", "--detections", det, "--out", tmp_path / "o"]) == 3
    assert "r_wrist" in capsys.readouterr().err


def test_segment_cmd_outputs_are_byte_identical(tmp_path):
    det, _ = _piecewise_detections(tmp_path)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert run(["segment", "--detections", det, "--out", out_a]) == 0
    assert run(["segment", "--detections", det, "--out", out_b]) == 0
    for name in os.listdir(out_a):
        assert filecmp.cmp(out_a / name, out_b / name, shallow=False), name


def test_fuse_cmd_requires_wheel_region(tmp_path, capsys):
    bundle = synth.gen_driver_session([("safe_driving", 5)], seed=1, render=False)
    det = tmp_path / "d.jsonl"
    fileio.write_detections(det, bundle.payload["frames"])
    assert run(["fuse", "--detections", det, "--out", tmp_path / "o"]) == 4
    assert "wheel_region" in capsys.readouterr().err


def test_fuse_cmd_no_hands_is_data_not_error(tmp_path):
    frames = []
    for t in range(12):
        joints = {j: (0.4, 0.6, 0.9) for j in ("l_wrist", "r_wrist", "l_elbow", "r_elbow")}
        frames.append((synth.PoseFrame(frame_index=t, joints=joints), [], []))
    det = tmp_path / "d.jsonl"
    fileio.write_detections(det, frames)
    out = tmp_path / "o"
    assert run([
        "fuse", "--detections", det, "--wheel-region", "0.2,0.5,0.7,0.9", "--out", out,
    ]) == 0
    verdicts = fileio.read_jsonl(out / "verdicts.jsonl")
    assert len(verdicts) == 12
    assert all(not v["safe_driving"] for v in verdicts)
    assert fileio.read_jsonl(out / "training_records.jsonl") == []


def test_fuse_cmd_corrects_injected_flips(tmp_path):
    bundle = synth.gen_driver_session(
        [("drinking", 40), ("texting_left", 40)], side_flip_fraction=0.2, seed=31, render=False
    )
    session = tmp_path / "sess"
    session.mkdir()
    det = session / "detections.jsonl"
    fileio.write_detections(det, bundle.payload["frames"])
    cfg_path = session / "cfg.json"
    cfg_path.write_text(json.dumps({
        "fusion": {
            "wheel_region": bundle.ground_truth["wheel_region"],
            "frame_rate": bundle.ground_truth["frame_rate"],
        }
    }))
    out = tmp_path / "o"
    assert run(["fuse", "--detections", det, "--config", cfg_path, "--out", out]) == 0
    records = fileio.read_jsonl(out / "training_records.jsonl")
    side_fixes = {
        (r["frame"], r["payload"]["hand_index"]): r["payload"]["new_side"]
        for r in records
        if r["kind"] == "hand_side_label"
    }
    flips = bundle.ground_truth["flips"]
    assert flips
    corrected = sum(
        1 for f in flips if side_fixes.get((f["frame"], f["hand_index"])) == f["true_side"]
    )
    assert corrected / len(flips) >= 0.95
    assert (out / "episodes.json").exists()


def test_flow_group_cmd_and_mismatch_exit(tmp_path, capsys):
    bundle = synth.gen_shifted_pair(48, 0.0, 0.0, 1.5, seed=2)
    frames_dir = tmp_path / "frames"
    frames_dir.mkdir()
    for i in range(3):
        fileio.write_pgm(frames_dir / f"f_{i}.pgm", bundle.payload["frame1"])
    boxes = tmp_path / "boxes.jsonl"
    fileio.write_jsonl(boxes, [{"frame": i, "boxes": [[0.2, 0.2, 0.7, 0.7]]} for i in range(3)])
    out = tmp_path / "o"
    assert run(["flow-group", "--frames", frames_dir, "--boxes", boxes, "--out", out]) == 0
    header, rows = fileio.read_csv(out / "flow_groups.csv")
    assert len(rows) == 3
    assert {r[2] for r in rows} == {"0"}
    # frame/box count mismatch
    fileio.write_jsonl(boxes, [{"frame": 0, "boxes": []}])
    assert run(["flow-group", "--frames", frames_dir, "--boxes", boxes, "--out", out]) == 3


def test_pipeline_cmd_missing_session_exits_2(tmp_path, capsys):
    assert run(["pipeline", "--session", tmp_path / "nope", "--out", tmp_path / "o"]) == 2
    assert "load" in capsys.readouterr().err


def test_pipeline_cmd_small_session(tmp_path):
    sched = json.dumps({
        "episode_schedule": [["safe_driving", 30], ["drinking", 30]],
        "side_flip_fraction": 0.1,
        "frame_width": 64,
        "frame_height": 48,
    })
    sess = tmp_path / "sess"
    assert run(["synth", "--generator", "driver_session", "--seed", "13",
                "--params", sched, "--out", sess]) == 0
    out = tmp_path / "out"
    assert run(["pipeline", "--session", sess, "--config", sess / "session_config.json",
                "--out", out]) == 0
    report = fileio.read_json(out / "report.json")
    assert set(report["stages"]) == {"rpca", "segmentation", "flow_groups", "fusion", "episodes"}
    assert len(report["frames"]) == 60
    labels = {e["label"] for e in report["stages"]["episodes"]}
    assert "safe_driving" in labels and "drinking" in labels


def test_pipeline_warning_peak_overlaps_planted_anomaly(tmp_path):
    params = json.dumps({
        "episode_schedule": [["safe_driving", 80], ["drinking", 25], ["safe_driving", 80]],
        "side_flip_fraction": 0.0,
    })
    sess = tmp_path / "sess"
    assert run(["synth", "--generator", "driver_session", "--seed", "3",
                "--params", params, "--out", sess]) == 0
    out = tmp_path / "out"
    assert run(["pipeline", "--session", sess, "--config", sess / "session_config.json",
                "--out", out]) == 0
    report = fileio.read_json(out / "report.json")
    warn = report["stages"]["rpca"]["warning_frames"]
    assert warn
    inside = [f for f in warn if 80 <= f < 105]
    assert len(inside) / len(warn) >= 0.8
    flagged = {fr["frame"] for fr in report["frames"] if fr["rpca_warning"]}
    assert flagged == set(warn)


def test_pipeline_safe_only_session_has_no_training_records(tmp_path):
    params = json.dumps({
        "episode_schedule": [["safe_driving", 60]],
        "side_flip_fraction": 0.1,
        "frame_width": 64,
        "frame_height": 48,
    })
    sess = tmp_path / "sess"
    assert run(["synth", "--generator", "driver_session", "--seed", "8",
                "--params", params, "--out", sess]) == 0
    out = tmp_path / "out"
    assert run(["pipeline", "--session", sess, "--config", sess / "session_config.json",
                "--out", out]) == 0
    report = fileio.read_json(out / "report.json")
    assert report["stages"]["fusion"]["n_records"] == 0
    assert fileio.read_jsonl(out / "training_records.jsonl") == []
    # stabilized verdicts all true after the warm-up window
    verdicts = fileio.read_jsonl(out / "verdicts.jsonl")
    warmup = 5  # ceil(frame_rate 10 / 2)
    assert all(v["stabilized_safe_driving"] for v in verdicts[warmup:])


def test_config_unknown_key_exits_4(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"rcpa": {}}')
    bundle = synth.gen_driver_session([("safe_driving", 3)], seed=1, render=False)
    det = tmp_path / "d.jsonl"
    fileio.write_detections(det, bundle.payload["frames"])
    assert run(["segment", "--detections", det, "--config", cfg, "--out", tmp_path / "o"]) == 4
    assert "rcpa" in capsys.readouterr().err
