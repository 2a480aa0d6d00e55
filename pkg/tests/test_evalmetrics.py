import numpy as np
import pytest

from edgefield import evalmetrics, extract


def test_identical_clouds_perfect_scores():
    rng = np.random.default_rng(0)
    pts = rng.random((80, 3))
    assert evalmetrics.chamfer_eval(pts, pts.copy()) == 0.0
    m = evalmetrics.prf_iou(pts, pts.copy())
    assert (m.precision, m.recall, m.f_score, m.iou) == (1.0, 1.0, 1.0, 1.0)
    assert m.cd == 0.0


def test_chamfer_examples():
    a = np.array([[0.0, 0.0, 0.0]])
    b = np.array([[0.5, 0.0, 0.0]])
    assert evalmetrics.chamfer_eval(a, b) == pytest.approx(1.0)
    rng = np.random.default_rng(1)
    dense = rng.random((4000, 3))
    shifted = dense + np.array([0.01, 0.0, 0.0])
    assert evalmetrics.chamfer_eval(dense, shifted) == pytest.approx(0.02, rel=0.05)


def test_chamfer_symmetry_and_validation():
    rng = np.random.default_rng(2)
    a = rng.random((30, 3))
    b = rng.random((50, 3))
    assert evalmetrics.chamfer_eval(a, b) == evalmetrics.chamfer_eval(b, a)
    with pytest.raises(ValueError):
        evalmetrics.chamfer_eval(np.empty((0, 3)), b)


def test_prf_unmatched_points():
    a = np.array([[0.0, 0.0, 0.0]])
    b = np.array([[0.03, 0.0, 0.0]])
    m = evalmetrics.prf_iou(a, b, tau=0.02)
    assert (m.precision, m.recall, m.f_score, m.iou) == (0.0, 0.0, 0.0, 0.0)


def test_prf_formula_example():
    # 99 matched of 100 predictions, all 99 gt matched:
    # P = 0.99, R = 1, F = 2PR/(P+R), IoU = 198/(2*199-198)
    rng = np.random.default_rng(3)
    gt = rng.random((99, 3))
    pred = np.vstack([gt, [[5.0, 5.0, 5.0]]])
    m = evalmetrics.prf_iou(pred, gt)
    assert m.precision == pytest.approx(0.99)
    assert m.recall == 1.0
    assert m.f_score == pytest.approx(2 * 0.99 / 1.99)
    assert m.iou == pytest.approx(198 / (2 * 199 - 198))


def test_prf_empty_pred_flagged():
    m = evalmetrics.prf_iou(np.empty((0, 3)), np.random.default_rng(0).random((5, 3)))
    assert m.empty_pred and m.precision == 0.0


def test_matching_monotone_in_added_point():
    rng = np.random.default_rng(4)
    gt = rng.random((60, 3))
    pred = rng.random((40, 3))
    base = evalmetrics.prf_iou(pred, gt)
    added = np.vstack([pred, gt[0] + 0.001])
    more = evalmetrics.prf_iou(added, gt)
    assert more.recall >= base.recall
    assert more.precision * len(added) >= base.precision * len(pred)  # M_p never drops


def test_scale_equivariance():
    rng = np.random.default_rng(5)
    pred = rng.random((70, 3))
    gt = rng.random((80, 3))
    m1 = evalmetrics.prf_iou(pred, gt, tau=0.05)
    s = 3.7
    m2 = evalmetrics.prf_iou(pred * s, gt * s, tau=0.05 * s)
    assert m1.precision == m2.precision and m1.recall == m2.recall
    assert m1.iou == m2.iou
    assert m2.cd == pytest.approx(s * m1.cd, rel=1e-12)


def test_kdtree_matches_bruteforce_exactly():
    rng = np.random.default_rng(6)
    for _ in range(20):
        pred = rng.random((rng.integers(2, 60), 3))
        gt = rng.random((rng.integers(2, 60), 3))
        mk = evalmetrics.prf_iou(pred, gt, method="kdtree")
        mb = evalmetrics.prf_iou(pred, gt, method="brute")
        assert mk == mb
        assert evalmetrics.chamfer_eval(pred, gt, "kdtree") == evalmetrics.chamfer_eval(pred, gt, "brute")
    big_p = rng.random((500, 3))
    big_g = rng.random((500, 3))
    assert evalmetrics.prf_iou(big_p, big_g, method="kdtree") == evalmetrics.prf_iou(big_p, big_g, method="brute")


def test_evaluate_clouds_uses_shared_frame():
    # a pure rescale of the same geometry evaluates as a perfect match
    rng = np.random.default_rng(7)
    base = rng.random((200, 3))
    m = evalmetrics.evaluate_clouds(base * 7 + 3, base * 7 + 3)
    assert m.f_score == 1.0


def test_report_roundtrip(tmp_path):
    m = evalmetrics.Metrics(0.0123, 0.9, 0.8, 0.847, 0.72)
    txt = tmp_path / "metrics.txt"
    csvp = tmp_path / "metrics.csv"
    evalmetrics.write_report(m, txt, csvp)
    back = evalmetrics.read_report(txt)
    assert set(back) == set(evalmetrics.METRIC_FIELDS)
    assert back["cd"] == 0.0123 and back["f_score"] == 0.847
    rows = csvp.read_text().strip().splitlines()
    assert rows[0] == "cd,precision,recall,f_score,iou"
    assert len(rows) == 2
