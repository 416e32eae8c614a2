import json

import numpy as np
import pytest

from vopr.archive import SignatureSet
from vopr.cli import main
from vopr.config import PipelineConfig
from vopr.ingest import write_sequence
from vopr.matching import read_matrix_csv
from vopr.synth import generate, street_world, write_world_spec
from vopr.evaluation import read_pr_summary


@pytest.fixture(scope="module")
def world_files(tmp_path_factory):
    """A small out-and-back world driven both ways, written as keyframe files."""
    root = tmp_path_factory.mktemp("world")
    spec = street_world(seed=11, length=50.0, n_buildings=6, n_trees=5,
                        points_per_keyframe=180, out_and_back=True)
    spec_path = root / "world.txt"
    write_world_spec(spec, spec_path)
    seq = generate(spec)
    kf_path = root / "seq.kf"
    write_sequence(seq.keyframes, kf_path)
    return root, spec_path, kf_path


def test_synth_subcommand(tmp_path):
    spec_path = tmp_path / "one_way.txt"
    spec_path.write_text(
        "seed = 4\n"
        "points_per_keyframe = 150\n"
        "waypoint = 0 0\n"
        "waypoint = 40 0\n"
        "ground = -10 50 -15 15 120 10 800\n"
        "building = 20 8 8 5 12 180 10 300\n"
        "tree = 10 -5 2 4 90 20 150\n"
        "perturb_intensity = 0.7 -30 10\n"
    )
    out = tmp_path / "seq.kf"
    assert main(["synth", str(spec_path), "--out", str(out)]) == 0
    assert out.exists() and out.stat().st_size > 0
    reversed_out = tmp_path / "rev.kf"
    assert main(["synth", str(spec_path), "--out", str(reversed_out), "--reverse"]) == 0
    assert reversed_out.read_bytes() != out.read_bytes()
    perturbed_out = tmp_path / "pert.kf"
    assert main(["synth", str(spec_path), "--out", str(perturbed_out), "--perturb"]) == 0
    assert perturbed_out.read_bytes() != out.read_bytes()


def test_synth_demo_spec(tmp_path):
    path = tmp_path / "demo.txt"
    assert main(["synth", "--write-demo-spec", str(path)]) == 0
    out = tmp_path / "demo.kf"
    assert main(["synth", str(path), "--out", str(out)]) == 0
    assert out.stat().st_size > 0


def test_stage_chain_and_pipeline_equivalence(tmp_path, world_files):
    _, _, kf_path = world_files
    scans = tmp_path / "scans.sca"
    sigs = tmp_path / "sigs.npz"
    match_dir = tmp_path / "match"
    eval_dir = tmp_path / "eval"

    assert main(["imitate", str(kf_path), "--out", str(scans), "--filter", "voxel"]) == 0
    assert main(
        ["describe", str(scans), "--descriptor", "scan_context", "--out", str(sigs)]
    ) == 0
    assert main(
        [
            "match", str(sigs), str(sigs),
            "--out-dir", str(match_dir),
            "--same-sequence", "--exclusion-window", "40",
            "--no-figures",
        ]
    ) == 1  # exclusion-window flag changes the recorded config -> refused
    assert main(
        [
            "match", str(sigs), str(sigs),
            "--out-dir", str(match_dir),
            "--same-sequence", "--no-figures",
        ]
    ) == 0
    assert (match_dir / "d_structure.csv").exists()
    assert (match_dir / "d_intensity.csv").exists()
    assert (match_dir / "d_final.csv").exists()
    assert main(
        [
            "evaluate",
            "--matches", str(match_dir / "matches.csv"),
            "--query-keyframes", str(kf_path),
            "--out-dir", str(eval_dir),
        ]
    ) == 0
    for name in ("pr_curve.csv", "summary.csv", "recognized.csv", "pr_curve.png", "recognized.png"):
        assert (eval_dir / name).exists(), name

    # one-shot pipeline must reproduce the chained artifacts bit for bit
    pipe_dir = tmp_path / "pipe"
    assert main(
        [
            "pipeline",
            "--query", str(kf_path),
            "--descriptor", "scan_context",
            "--out-dir", str(pipe_dir),
            "--no-figures",
        ]
    ) == 0
    for name in ("matches.csv", "d_final.csv", "d_structure.csv", "d_intensity.csv"):
        assert (pipe_dir / name).read_bytes() == (match_dir / name).read_bytes(), name
    for name in ("pr_curve.csv", "summary.csv", "recognized.csv"):
        assert (pipe_dir / name).read_bytes() == (eval_dir / name).read_bytes(), name

    summary = read_pr_summary(pipe_dir / "summary.csv")
    assert 0.0 <= summary["auc"] <= 1.0


def test_describe_deterministic_archives(tmp_path, world_files):
    _, _, kf_path = world_files
    scans = tmp_path / "scans.sca"
    assert main(["imitate", str(kf_path), "--out", str(scans), "--filter", "polar"]) == 0
    a = tmp_path / "a.npz"
    b = tmp_path / "b.npz"
    for out in (a, b):
        assert main(["describe", str(scans), "--descriptor", "delight", "--out", str(out)]) == 0
    sa = SignatureSet.load(a)
    sb = SignatureSet.load(b)
    assert np.array_equal(sa.keyframe_ids, sb.keyframe_ids)
    for key in sa.payload:
        assert np.array_equal(sa.payload[key], sb.payload[key])


def test_describe_jobs_parallel_identical(tmp_path, world_files):
    _, _, kf_path = world_files
    scans = tmp_path / "scans.sca"
    assert main(["imitate", str(kf_path), "--out", str(scans), "--filter", "voxel"]) == 0
    a = tmp_path / "j1.npz"
    b = tmp_path / "j2.npz"
    assert main(["describe", str(scans), "--descriptor", "scan_context", "--out", str(a)]) == 0
    assert main(
        ["describe", str(scans), "--descriptor", "scan_context", "--out", str(b), "--jobs", "2"]
    ) == 0
    sa, sb = SignatureSet.load(a), SignatureSet.load(b)
    assert np.array_equal(sa.keyframe_ids, sb.keyframe_ids)
    for key in sa.payload:
        assert np.array_equal(sa.payload[key], sb.payload[key])


def test_polar_archive_to_scan_context_warns_but_proceeds(tmp_path, world_files, caplog):
    _, _, kf_path = world_files
    scans = tmp_path / "scans.sca"
    assert main(["imitate", str(kf_path), "--out", str(scans), "--filter", "polar"]) == 0
    out = tmp_path / "sc.npz"
    with caplog.at_level("WARNING"):
        assert main(["describe", str(scans), "--descriptor", "scan_context", "--out", str(out)]) == 0
    assert any("paired" in rec.message for rec in caplog.records)
    assert out.exists()


def test_mismatched_archive_configs_refused(tmp_path, world_files):
    _, _, kf_path = world_files
    s1 = tmp_path / "s1.sca"
    s2 = tmp_path / "s2.sca"
    assert main(["imitate", str(kf_path), "--out", str(s1), "--filter", "voxel"]) == 0
    assert main(
        ["imitate", str(kf_path), "--out", str(s2), "--filter", "voxel", "--scan-range", "30"]
    ) == 0
    a = tmp_path / "a.npz"
    b = tmp_path / "b.npz"
    assert main(["describe", str(s1), "--descriptor", "scan_context", "--out", str(a)]) == 0
    assert main(["describe", str(s2), "--descriptor", "scan_context", "--out", str(b)]) == 0
    rc = main(["match", str(a), str(b), "--out-dir", str(tmp_path / "m"), "--no-figures"])
    assert rc == 1


def test_describe_flag_fingerprint_conflict(tmp_path, world_files):
    _, _, kf_path = world_files
    scans = tmp_path / "scans.sca"
    assert main(["imitate", str(kf_path), "--out", str(scans), "--filter", "voxel"]) == 0
    rc = main(
        [
            "describe", str(scans), "--descriptor", "scan_context",
            "--out", str(tmp_path / "x.npz"), "--sc-rings", "10",
        ]
    )
    assert rc == 1
    # restating the recorded value is fine
    rc = main(
        [
            "describe", str(scans), "--descriptor", "scan_context",
            "--out", str(tmp_path / "x.npz"), "--sc-rings", "20",
        ]
    )
    assert rc == 0


def test_empty_keyframe_file_is_data_error(tmp_path):
    empty = tmp_path / "empty.kf"
    empty.write_text("")
    rc = main(["imitate", str(empty), "--out", str(tmp_path / "s.sca")])
    assert rc == 2


def test_missing_file_is_data_error(tmp_path):
    rc = main(["imitate", str(tmp_path / "nope.kf"), "--out", str(tmp_path / "s.sca")])
    assert rc == 2


def test_degenerate_scans_exit_code(tmp_path):
    """Pose-only keyframes produce empty scans; strict mode maps to exit 3."""
    kf = tmp_path / "poses.kf"
    kf.write_text("".join(f"KF {i} {float(i)} 0 0 0 0 0 1 0\n" for i in range(5)))
    scans = tmp_path / "s.sca"
    assert main(["imitate", str(kf), "--out", str(scans)]) == 0
    rc = main(
        [
            "describe", str(scans), "--descriptor", "scan_context",
            "--out", str(tmp_path / "x.npz"), "--on-degenerate", "error",
        ]
    )
    assert rc == 3


def test_usage_error_exit_code():
    assert main(["imitate"]) == 1  # missing positional
    assert main(["describe", "x", "--descriptor", "bogus", "--out", "y"]) == 1


def test_imitate_split_dir(tmp_path, world_files):
    _, _, kf_path = world_files
    split = tmp_path / "per_kf"
    assert main(["imitate", str(kf_path), "--split-dir", str(split)]) == 0
    files = sorted(split.glob("scan_*.sca"))
    assert len(files) == 101  # out-and-back: 2 x 50 m + 1


def test_matrix_csv_matches_library(tmp_path, world_files):
    """CSV exports agree with an in-process run of the same stages."""
    _, _, kf_path = world_files
    from vopr.ingest import load_sequence
    from vopr.pipeline import describe_scans, match_signature_sets
    from vopr.scan import imitate_sequence

    pipe_dir = tmp_path / "pipe"
    assert main(
        [
            "pipeline", "--query", str(kf_path), "--descriptor", "m2dp",
            "--out-dir", str(pipe_dir), "--no-figures",
        ]
    ) == 0
    config = PipelineConfig()
    kfs = load_sequence(kf_path)
    scans = imitate_sequence(kfs, config, "polar")
    sigs = describe_scans(scans, "m2dp", config)
    out = match_signature_sets(sigs, sigs, config, part="fused", same_sequence=True)
    got, _ = read_matrix_csv(pipe_dir / "d_structure.csv")
    assert np.array_equal(got.query_ids, out.d_structure.query_ids)
    assert np.abs(got.values - out.d_structure.values).max() == 0.0


def test_config_file_and_flag_precedence(tmp_path, world_files):
    _, _, kf_path = world_files
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps({"scan_range": 30.0}))
    scans = tmp_path / "s.sca"
    assert main(
        ["imitate", str(kf_path), "--out", str(scans), "--config", str(cfg_file)]
    ) == 0
    from vopr.scan import read_scan_archive

    _, cfg = read_scan_archive(scans)
    assert cfg.scan_range == 30.0
    assert main(
        [
            "imitate", str(kf_path), "--out", str(scans),
            "--config", str(cfg_file), "--scan-range", "25",
        ]
    ) == 0
    _, cfg = read_scan_archive(scans)
    assert cfg.scan_range == 25.0
