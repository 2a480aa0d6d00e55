import numpy as np
import pytest
from scipy.spatial import cKDTree

from edgefield import curvefit, extract, geom, synth


def test_chamfer_identity_and_arithmetic():
    rng = np.random.default_rng(0)
    pts = rng.random((40, 3))
    loss, grad = curvefit.chamfer_loss(pts, pts.copy(), gamma=1.0)
    assert loss == 0.0
    a = np.array([[0.0, 0.0, 0.0]])
    b = np.array([[1.0, 0.0, 0.0]])
    assert curvefit.chamfer_loss(a, b, gamma=1.0)[0] == pytest.approx(2.0)
    assert curvefit.chamfer_loss(a, b, gamma=5.0)[0] == pytest.approx(6.0)
    with pytest.raises(ValueError):
        curvefit.chamfer_loss(np.empty((0, 3)), b)


def test_chamfer_gradient_matches_fd():
    # perturbations stay below 10% of the nearest-neighbor margin, keeping
    # assignments fixed so the subgradient is the exact derivative
    rng = np.random.default_rng(1)
    samples = rng.random((12, 3))
    targets = samples + rng.normal(0, 0.01, (12, 3))
    loss, grad = curvefit.chamfer_loss(samples, targets, gamma=3.0)
    h = 1e-7
    for _ in range(20):
        i, k = rng.integers(12), rng.integers(3)
        hi = samples.copy(); hi[i, k] += h
        lo = samples.copy(); lo[i, k] -= h
        fd = (curvefit.chamfer_loss(hi, targets, 3.0)[0]
              - curvefit.chamfer_loss(lo, targets, 3.0)[0]) / (2 * h)
        assert abs(fd - grad[i, k]) <= max(1e-6, 1e-3 * abs(fd))


def test_sample_and_dilate_basics():
    rng = np.random.default_rng(2)
    curve = rng.random((4, 3))
    pts, w, off = curvefit.sample_and_dilate(curve, 2, 2, 0.01, rng)
    assert np.allclose(pts[0], curve[0]) and np.allclose(pts[1], curve[3])
    pts, w, off = curvefit.sample_and_dilate(curve, 10, 25, 0.0, rng)
    assert len(pts) == 25
    assert np.abs(off).max() == 0.0
    base = geom.bezier_basis_weights(np.linspace(0, 1, 10)) @ curve
    assert np.abs(pts[:10] - base).max() < 1e-12
    # dilated points reuse a base sample's weights
    assert np.abs(w @ curve + off - pts).max() < 1e-12
    with pytest.raises(ValueError):
        curvefit.sample_and_dilate(curve, 5, 3, 0.01, rng)


def test_dilation_offset_magnitude():
    # 3D Gaussian offsets: mean norm = sigma * sqrt(8/pi), checked Monte-Carlo
    rng = np.random.default_rng(3)
    curve = np.array([[0, 0, 0], [0.3, 0, 0], [0.6, 0, 0], [1.0, 0, 0.0]])
    sigma = 0.05
    _, _, off = curvefit.sample_and_dilate(curve, 100, 600, sigma, rng)
    mean_norm = np.linalg.norm(off[100:], axis=1).mean()
    expect = sigma * np.sqrt(8 / np.pi)
    assert abs(mean_norm - expect) / expect < 0.2


def test_fit_single_line_perfect_segment():
    rng = np.random.default_rng(4)
    a, b = np.array([0.1, 0.2, 0.3]), np.array([0.9, 0.7, 0.4])
    ts = np.linspace(0, 1, 300)
    pts = a + ts[:, None] * (b - a)
    cfg = curvefit.FitConfig()
    seg, inliers = curvefit.fit_single_line(pts, cfg, rng)
    assert len(inliers) == len(pts)
    ends = curvefit.point_segment_distance(np.stack([a, b]), seg[0], seg[1])
    assert ends.max() <= cfg.delete_radius


def test_fit_single_line_picks_one_of_two_parallel():
    rng = np.random.default_rng(5)
    ts = np.linspace(0, 1, 200)
    line1 = np.stack([ts, np.zeros(200), np.zeros(200)], 1)
    line2 = line1 + np.array([0.0, 0.3, 0.0])
    pts = np.vstack([line1, line2])
    cfg = curvefit.FitConfig()
    seg, inliers = curvefit.fit_single_line(pts, cfg, rng)
    y = pts[inliers][:, 1]
    assert (np.abs(y) < 0.05).all() or (np.abs(y - 0.3) < 0.05).all()


def test_fit_single_line_outlier_recall():
    rng = np.random.default_rng(6)
    ts = np.linspace(0, 1, 1000)
    pts = np.stack([ts, np.full(1000, 0.5), np.full(1000, 0.5)], 1)
    outliers = rng.random((50, 3))
    cloud = np.vstack([pts, outliers])
    cfg = curvefit.FitConfig()
    seg, inliers = curvefit.fit_single_line(cloud, cfg, rng)
    recall = (inliers < 1000).sum() / 1000
    assert recall >= 0.95


def test_fit_single_line_needs_points():
    with pytest.raises(ValueError):
        curvefit.fit_single_line(np.zeros((1, 3)), curvefit.FitConfig(), np.random.default_rng(0))


def _cube_cloud(side=0.9, per_edge=200):
    scene = synth.make_primitive_scene("cube", side=side)
    pts = np.concatenate(
        [geom.bezier_point(c, np.linspace(0, 1, per_edge)) for c in scene.curves]
    )
    pc = extract.normalize_unit(pts)
    edges = [(c[0] * pc.scale + pc.offset, c[3] * pc.scale + pc.offset) for c in scene.curves]
    return pc.points, edges


def _segment_hausdorff(s, e):
    ts = np.linspace(0, 1, 100)
    ps = s[0] + ts[:, None] * (s[1] - s[0])
    pe = e[0] + ts[:, None] * (e[1] - e[0])
    return max(cKDTree(pe).query(ps)[0].max(), cKDTree(ps).query(pe)[0].max())


def test_coarse_fit_cube_wireframe():
    # reference run, frozen: 12 lines, each within 0.015 of a true edge
    # (deletion radius bounds corner accuracy; see the endpoint re-snap)
    points, edges = _cube_cloud()
    cfg = curvefit.FitConfig()
    segments = curvefit.coarse_fit(points, cfg, np.random.default_rng(cfg.seed))
    assert len(segments) == 12
    for seg in segments:
        assert min(_segment_hausdorff(seg, e) for e in edges) <= 0.015


def test_coarse_fit_single_segment():
    rng = np.random.default_rng(7)
    ts = np.linspace(0, 1, 150)
    pts = np.stack([ts, np.full_like(ts, 0.5), np.full_like(ts, 0.5)], 1)
    segments = curvefit.coarse_fit(pts, curvefit.FitConfig(), rng)
    assert len(segments) == 1


def test_coarse_fit_terminates_and_validates():
    cfg = curvefit.FitConfig()
    with pytest.raises(ValueError):
        curvefit.coarse_fit(np.zeros((10, 3)), cfg, np.random.default_rng(0))
    rng = np.random.default_rng(8)
    blob = rng.random((90, 3))
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        segments = curvefit.coarse_fit(blob, cfg, rng)
    assert len(segments) <= len(blob) // 3 + 1


def test_lines_to_beziers_linear_precision():
    lines = [np.array([[0.0, 0, 0], [3.0, 0, 0]]), np.array([[1.0, 1, 1], [1.0, 2, 1]])]
    curves = curvefit.lines_to_beziers(lines)
    assert curves.shape == (2, 4, 3)
    assert np.allclose(curves[0, :, 0], [0, 1, 2, 3])
    ts = np.linspace(0, 1, 17)
    for line, curve in zip(lines, curves):
        expect = line[0] + ts[:, None] * (line[1] - line[0])
        assert np.abs(geom.bezier_point(curve, ts) - expect).max() < 1e-12
    with pytest.raises(ValueError):
        curvefit.lines_to_beziers([])


def test_endpoint_loss_masking():
    far = curvefit.lines_to_beziers(
        [np.array([[0.0, 0, 0], [1.0, 0, 0]]), np.array([[0.0, 5, 0], [1.0, 5, 0]])]
    )
    loss, grad = curvefit.endpoint_loss(far, d=0.1)
    assert loss == 0.0 and np.abs(grad).max() == 0.0
    shared = curvefit.lines_to_beziers(
        [np.array([[0.0, 0, 0], [1.0, 0, 0]]), np.array([[1.0, 0, 0], [1.0, 1, 0]])]
    )
    loss, _ = curvefit.endpoint_loss(shared, d=0.1)
    assert loss == 0.0  # coincident pair contributes zero
    d = 0.2
    near = curvefit.lines_to_beziers(
        [np.array([[0.0, 0, 0], [1.0, 0, 0]]), np.array([[1.0 + d / 2, 0, 0], [2.0, 0, 0]])]
    )
    loss, grad = curvefit.endpoint_loss(near, d=d)
    assert loss == pytest.approx(d * d / 4)
    # same-curve endpoints never pair: a single short curve contributes nothing
    single = curvefit.lines_to_beziers([np.array([[0.0, 0, 0], [0.05, 0, 0]])])
    assert curvefit.endpoint_loss(single, d=1.0)[0] == 0.0


def test_endpoint_loss_gradient():
    rng = np.random.default_rng(9)
    curves = rng.random((3, 4, 3))
    pairs = curvefit.endpoint_pairs(curves, d=1.0)
    loss, grad = curvefit.endpoint_loss(curves, pairs=pairs)
    h = 1e-7
    for _ in range(12):
        i, j, k = rng.integers(3), int(rng.choice([0, 3])), rng.integers(3)
        hi = curves.copy(); hi[i, j, k] += h
        lo = curves.copy(); lo[i, j, k] -= h
        fd = (curvefit.endpoint_loss(hi, pairs=pairs)[0]
              - curvefit.endpoint_loss(lo, pairs=pairs)[0]) / (2 * h)
        assert abs(fd - grad[i, j, k]) <= max(1e-6, 1e-4 * abs(fd))


def test_fine_fit_fixed_point_and_improvement():
    rng = np.random.default_rng(10)
    points, _ = _cube_cloud(per_edge=120)
    cfg = curvefit.FitConfig(grid_resolution=64, fine_steps=120)
    segments = curvefit.coarse_fit(points, cfg, np.random.default_rng(0))
    curves = curvefit.lines_to_beziers(segments)

    def true_chamfer(cs):
        samp = curvefit.sample_curveset(cs, 0.005)
        return curvefit.chamfer_loss(samp, points, 1.0)[0]

    before = true_chamfer(curves)
    fitted = curvefit.fine_fit(curves, points, cfg, np.random.default_rng(1))
    after = true_chamfer(fitted)
    assert after <= before + 1e-9
    assert fitted.shape == curves.shape  # never changes the curve count


def test_fine_fit_bends_lines_into_arcs():
    # quarter-circle data initialized from straight chords must halve its CD
    rng = np.random.default_rng(11)
    k = 0.5523 * 0.4
    arc = np.array([[0.4, 0.5, 0.0], [0.4, 0.5, k], [k, 0.5, 0.4], [0.0, 0.5, 0.4]])
    arc_pts = geom.bezier_point(arc, np.linspace(0, 1, 400))
    chord = curvefit.lines_to_beziers([np.stack([arc_pts[0], arc_pts[-1]])])
    cfg = curvefit.FitConfig(grid_resolution=64)
    fitted = curvefit.fine_fit(chord, arc_pts, cfg, rng)

    def cd(cs):
        samp = curvefit.sample_curveset(cs, 0.004)
        d1 = cKDTree(arc_pts).query(samp)[0]
        d2 = cKDTree(samp).query(arc_pts)[0]
        return d1.mean() + d2.mean()

    assert cd(fitted) < 0.5 * cd(chord)


def test_fine_fit_welds_nearby_endpoints():
    gap = 0.03
    lines = [
        np.array([[0.0, 0.0, 0.0], [0.5, 0.0, 0.0]]),
        np.array([[0.5 + gap, 0.0, 0.0], [0.5 + gap, 0.5, 0.0]]),
    ]
    targets = np.vstack([
        lines[0][0] + np.linspace(0, 1, 200)[:, None] * (lines[0][1] - lines[0][0]),
        lines[1][0] + np.linspace(0, 1, 200)[:, None] * (lines[1][1] - lines[1][0]),
    ])
    curves = curvefit.lines_to_beziers(lines)
    cfg = curvefit.FitConfig(grid_resolution=64)  # weld radius 4/64 > gap
    before = np.linalg.norm(curves[0, 3] - curves[1, 0])
    fitted = curvefit.fine_fit(curves, targets, cfg, np.random.default_rng(12))
    after = np.linalg.norm(fitted[0, 3] - fitted[1, 0])
    assert after <= before


def test_fit_pipeline_deterministic_and_validates():
    points, _ = _cube_cloud(per_edge=80)
    cfg = curvefit.FitConfig(grid_resolution=64, coarse_steps=60, fine_steps=60)
    a = curvefit.fit_pipeline(points, cfg, np.random.default_rng(3))
    b = curvefit.fit_pipeline(points, cfg, np.random.default_rng(3))
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        curvefit.fit_pipeline(np.empty((0, 3)), cfg, np.random.default_rng(0))


def test_fit_pipeline_returns_original_frame():
    rng = np.random.default_rng(13)
    scene = synth.make_primitive_scene("cube", side=0.5)
    pts = np.concatenate([geom.bezier_point(c, np.linspace(0, 1, 150)) for c in scene.curves])
    pts = pts + np.array([3.0, -2.0, 0.5])  # shifted scene frame
    cfg = curvefit.FitConfig(grid_resolution=64, coarse_steps=80, fine_steps=80)
    curves = curvefit.fit_pipeline(pts, cfg, rng)
    samp = curvefit.sample_curveset(curves, 0.01)
    d = cKDTree(pts).query(samp)[0]
    assert d.mean() < 0.02  # lives among the input points, not in [0,1]^3


def test_curves_file_roundtrip(tmp_path):
    rng = np.random.default_rng(14)
    curves = rng.normal(size=(5, 4, 3))
    path = tmp_path / "curves.txt"
    curvefit.write_curves(path, curves)
    back = curvefit.read_curves(path)
    assert np.array_equal(back, curves)
    bad = tmp_path / "bad.txt"
    bad.write_text("2\n1 2 3\n")
    with pytest.raises(ValueError):
        curvefit.read_curves(str(bad))
