import numpy as np
import pytest

from vopr.config import PipelineConfig
from vopr.errors import DataFormatError, DegenerateInputError
from vopr.evaluation import (
    GroundTruthRelation,
    build_ground_truth,
    pr_curve,
    read_pr_summary,
    recognized_places,
    write_pr_curve_csv,
    write_recognized_csv,
    write_summary_csv,
)
from vopr.matching import MatchResult


def _gt(matrix, qids=None, rids=None, threshold=10.0):
    m = np.asarray(matrix, dtype=bool)
    q = np.arange(m.shape[0]) if qids is None else np.asarray(qids)
    r = np.arange(m.shape[1]) if rids is None else np.asarray(rids)
    return GroundTruthRelation(m, q, r, threshold)


def test_ground_truth_strict_inequality():
    qp = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    rp = np.array([[9.99, 0.0, 0.0], [10.0, 0.0, 0.0]])
    gt = build_ground_truth(qp, rp, 10.0, np.array([0, 1]), np.array([10, 11]))
    assert gt.matrix[0, 0] and gt.matrix[1, 0]
    assert not gt.matrix[0, 1] and not gt.matrix[1, 1]


def test_ground_truth_matches_pairwise_oracle(rng):
    qp = rng.uniform(-50, 50, (12, 3))
    rp = rng.uniform(-50, 50, (20, 3))
    gt = build_ground_truth(qp, rp, 15.0, np.arange(12), np.arange(20))
    for i in range(12):
        for j in range(20):
            assert gt.matrix[i, j] == (np.linalg.norm(qp[i] - rp[j]) < 15.0)


def test_ground_truth_exclusion_window():
    qp = np.zeros((1, 3))
    rp = np.zeros((3, 3))
    gt = build_ground_truth(
        qp, rp, 10.0, np.array([100]), np.array([30, 99, 250]), exclusion_window=100
    )
    # gaps 70 and 1 fall inside the window; 150 is admissible
    assert gt.matrix.tolist() == [[False, False, True]]


# --- hand-computed sweep cases --------------------------------------------------

def test_pr_curve_perfect_matcher():
    """Case A: every accepted match true, all queries matchable."""
    res = MatchResult(
        np.arange(4), np.array([0, 1, 2, 3]), np.array([0.1, 0.2, 0.3, 0.4])
    )
    gt = _gt(np.eye(4))
    curve = pr_curve(res, gt)
    assert np.array_equal(curve.precisions, np.ones(4))
    assert np.array_equal(curve.recalls, [0.25, 0.5, 0.75, 1.0])
    assert curve.auc == pytest.approx(1.0)
    assert curve.max_recall_at_full_precision == pytest.approx(1.0)
    assert curve.operating_threshold == pytest.approx(0.4)


def test_pr_curve_first_accepted_false():
    """Case B: tightest match is wrong; hand-computed AUC = 5/18."""
    res = MatchResult(np.arange(3), np.array([1, 1, 2]), np.array([0.1, 0.2, 0.3]))
    gt = _gt([[1, 0, 0], [0, 1, 0], [0, 0, 1]])
    curve = pr_curve(res, gt)
    assert curve.max_recall_at_full_precision == 0.0
    assert curve.operating_threshold is None
    assert np.allclose(curve.precisions, [0.0, 0.5, 2.0 / 3.0])
    assert np.allclose(curve.recalls, [0.0, 1.0 / 3.0, 2.0 / 3.0])
    assert curve.auc == pytest.approx(5.0 / 18.0)


def test_pr_curve_mixed_with_unmatchable_query():
    """Case C: score ties plus an unmatchable query; hand-computed AUC = 0.6375."""
    res = MatchResult(
        np.arange(5),
        np.array([0, 1, 0, 0, 4]),
        np.array([0.5, 0.5, 0.7, 0.9, 1.1]),
    )
    gt = _gt(
        [
            [1, 0, 0, 0, 0],
            [0, 1, 0, 0, 0],
            [0, 0, 1, 0, 0],  # q2 matchable but matched to a wrong reference
            [0, 0, 0, 0, 0],  # q3 has no true reference: precision-only query
            [0, 0, 0, 0, 1],
        ]
    )
    # matchable queries: q0, q1, q2, q4 -> recall denominator 4
    curve = pr_curve(res, gt)
    # thresholds 0.5, 0.7, 0.9, 1.1
    assert np.allclose(curve.precisions, [1.0, 2.0 / 3.0, 0.5, 0.6])
    assert np.allclose(curve.recalls, [0.5, 0.5, 0.5, 0.75])
    assert curve.max_recall_at_full_precision == pytest.approx(0.5)
    assert curve.operating_threshold == pytest.approx(0.5)
    auc = 0.5 * (1.0 + 1.0) / 2 + 0.25 * (0.5 + 0.6) / 2
    assert curve.auc == pytest.approx(auc)


def test_pr_curve_no_matchable_query_errors():
    res = MatchResult(np.arange(2), np.array([0, 1]), np.array([0.1, 0.2]))
    with pytest.raises(DegenerateInputError):
        pr_curve(res, _gt(np.zeros((2, 2))))


def test_pr_curve_auc_monotone_transform_invariant(rng):
    n = 30
    diffs = rng.random(n) * 5
    best = rng.integers(0, 10, n)
    gt_m = rng.random((n, 10)) < 0.3
    gt_m[0, best[0]] = True  # ensure at least one matchable
    res_a = MatchResult(np.arange(n), best, diffs)
    res_b = MatchResult(np.arange(n), best, np.exp(diffs) + 3.0)
    a = pr_curve(res_a, _gt(gt_m))
    b = pr_curve(res_b, _gt(gt_m))
    assert a.auc == pytest.approx(b.auc, abs=1e-12)
    assert a.max_recall_at_full_precision == b.max_recall_at_full_precision


def test_pr_curve_separable_scores_reach_construction_recall(rng):
    """True matches strictly below all false scores: max recall = fraction matched correctly."""
    n_true, n_false = 8, 5
    diffs = np.concatenate([rng.random(n_true), 2.0 + rng.random(n_false)])
    best = np.arange(n_true + n_false)
    gt_m = np.zeros((n_true + n_false, n_true + n_false), dtype=bool)
    for i in range(n_true):
        gt_m[i, i] = True
    res = MatchResult(np.arange(n_true + n_false), best, diffs)
    curve = pr_curve(res, _gt(gt_m))
    assert curve.max_recall_at_full_precision == pytest.approx(1.0)  # all 8 of 8 matchable


def test_unmatched_query_never_accepted():
    res = MatchResult(np.array([0, 1]), np.array([0, -1]), np.array([0.3, np.inf]))
    gt = _gt([[1, 0], [1, 0]])
    curve = pr_curve(res, gt)
    assert curve.recalls.max() == pytest.approx(0.5)


def test_recognized_places_flags():
    res = MatchResult(np.arange(3), np.array([0, 1, 2]), np.array([0.1, 0.2, 0.9]))
    gt = _gt([[1, 0, 0], [0, 1, 0], [0, 0, 0]])
    curve = pr_curve(res, gt)
    qpos = np.arange(9, dtype=float).reshape(3, 3)
    recs = recognized_places(res, qpos, curve)
    # operating threshold 0.2: first two queries accepted (both true), third not
    assert [r.recognized for r in recs] == [True, True, False]
    # recomputation oracle: recognized == difference <= operating threshold
    for r, diff in zip(recs, res.differences):
        assert r.recognized == (diff <= curve.operating_threshold)


def test_recognized_places_zero_recall_flags_none():
    res = MatchResult(np.arange(2), np.array([1, 0]), np.array([0.1, 0.2]))
    gt = _gt([[1, 0], [0, 1]])
    curve = pr_curve(res, gt)
    assert curve.max_recall_at_full_precision == 0.0
    recs = recognized_places(res, np.zeros((2, 3)), curve)
    assert not any(r.recognized for r in recs)


def test_csv_outputs_round_trip(tmp_path):
    res = MatchResult(np.arange(4), np.array([0, 1, 2, 3]), np.array([0.1, 0.2, 0.3, 0.4]))
    gt = _gt(np.eye(4))
    curve = pr_curve(res, gt)
    fp = PipelineConfig().fingerprint()
    write_pr_curve_csv(curve, tmp_path / "pr_curve.csv", fp)
    write_summary_csv(curve, tmp_path / "summary.csv", fp, extra={"part": "fused"})
    recs = recognized_places(res, np.zeros((4, 3)), curve)
    write_recognized_csv(recs, tmp_path / "recognized.csv", fp)
    summary = read_pr_summary(tmp_path / "summary.csv")
    assert summary["auc"] == pytest.approx(1.0)
    assert summary["max_recall_at_full_precision"] == pytest.approx(1.0)
    lines = (tmp_path / "pr_curve.csv").read_text().splitlines()
    assert lines[0].startswith("# config") and lines[1] == "threshold,precision,recall"
    assert len(lines) == 2 + 4


def test_pr_curve_id_mismatch_rejected():
    res = MatchResult(np.array([0, 1]), np.array([0, 1]), np.array([0.1, 0.2]))
    gt = _gt(np.eye(2), qids=[5, 6])
    with pytest.raises(DataFormatError):
        pr_curve(res, gt)
