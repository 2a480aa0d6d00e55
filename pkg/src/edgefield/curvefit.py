"""Coarse-to-fine parametric curve reconstruction from an edge point cloud.

Coarse stage: greedy fit-and-delete line extraction.  A RANSAC pair seeds a
segment, the seed grows to the connected run of collinear points, gradient
refinement polishes the endpoints under a one-side-weighted Chamfer
objective, then the segment's inliers are deleted and the loop repeats
until few points remain.

Fine stage: segments are upgraded to cubic Bezier curves (two interpolated
interior control points) and all control points are optimized jointly under
Chamfer plus a masked endpoint-attraction term that welds nearby curve ends
together.  Nearest-neighbor assignments and the endpoint mask are refreshed
periodically; between refreshes the objective is a fixed quadratic.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geom import bezier_basis_weights, line_as_bezier
from .extract import PointCloud, denormalize, normalize_unit
from .optim import make_optimizer


@dataclass
class FitConfig:
    gamma_coarse: float = 5.0
    gamma_fine: float = 1.0
    samples_per_curve: int = 100
    dilated_samples: int = 500
    dilation_sigma: float = 0.01
    stop_remaining: int = 20
    delete_radius: float = 0.02
    endpoint_d_voxels: float = 4.0
    grid_resolution: int = 256
    lambda_ep: float = 0.01
    learning_rate: float = 0.5
    coarse_learning_rate: float = 0.05
    ransac_trials: int = 64
    coarse_steps: int = 200
    fine_steps: int = 500
    mask_refresh: int = 50
    optimizer: str = "sgd"
    refine_full_cloud: bool = False
    seed: int = 0

    def validate(self):
        numeric = (
            self.gamma_coarse, self.gamma_fine, self.samples_per_curve,
            self.dilated_samples, self.dilation_sigma, self.stop_remaining,
            self.delete_radius, self.endpoint_d_voxels, self.grid_resolution,
            self.lambda_ep, self.learning_rate, self.coarse_learning_rate,
            self.ransac_trials, self.coarse_steps, self.fine_steps,
            self.mask_refresh,
        )
        if any(v <= 0 for v in numeric):
            raise ValueError("all FitConfig numeric fields must be positive")
        if min(self.gamma_coarse, self.gamma_fine) < 1:
            raise ValueError("chamfer gamma must be >= 1")
        if self.dilated_samples < self.samples_per_curve:
            raise ValueError("dilated_samples must be >= samples_per_curve")

    @property
    def endpoint_d(self):
        """Endpoint attraction radius in normalized units."""
        return self.endpoint_d_voxels / self.grid_resolution


def chamfer_loss(curve_samples, target_points, gamma=1.0):
    """One-side-weighted symmetric Chamfer with exact nearest neighbors.

    loss = gamma * mean_s ||s - nn_t(s)||^2 + mean_t ||t - nn_s(t)||^2

    Returns (loss, gradient w.r.t. each curve sample) using the current
    nearest-neighbor assignments (a piecewise-smooth subgradient).
    """
    s = np.asarray(curve_samples, dtype=float)
    t = np.asarray(target_points, dtype=float)
    if len(s) == 0 or len(t) == 0:
        raise ValueError("chamfer_loss requires two non-empty point sets")
    idx_st = cKDTree(t).query(s)[1]
    idx_ts = cKDTree(s).query(t)[1]
    return _chamfer_fixed(s, t, idx_st, idx_ts, gamma)


def _chamfer_fixed(s, t, idx_st, idx_ts, gamma):
    """Chamfer loss and sample gradient under fixed assignments."""
    d_st = s - t[idx_st]
    d_ts = s[idx_ts] - t
    loss = gamma * float((d_st * d_st).sum()) / len(s) + float((d_ts * d_ts).sum()) / len(t)
    grad = (2.0 * gamma / len(s)) * d_st
    np.add.at(grad, idx_ts, (2.0 / len(t)) * d_ts)
    return loss, grad


def point_segment_distance(points, a, b):
    """Distance from each point to the segment a-b."""
    p = np.asarray(points, dtype=float)
    ab = np.asarray(b, dtype=float) - a
    denom = float(ab @ ab)
    if denom < 1e-18:
        return np.linalg.norm(p - a, axis=1)
    tt = np.clip((p - a) @ ab / denom, 0.0, 1.0)
    return np.linalg.norm(p - (a + tt[:, None] * ab), axis=1)


def sample_and_dilate(curve, n, m, sigma, rng):
    """Sample n points at uniform parameters, dilate to m with Gaussian jitter.

    Returns (points (m,3), weights (m,4), offsets (m,3)); each dilated point
    inherits the Bernstein weights of its base sample, so its gradient with
    respect to the control points equals the base sample's.
    """
    if n < 2 or m < n:
        raise ValueError("need m >= n >= 2")
    ts = np.linspace(0.0, 1.0, n)
    weights = bezier_basis_weights(ts)
    offsets = np.zeros((m, 3))
    if m > n:
        base = rng.integers(0, n, m - n)
        offsets[n:] = rng.normal(0.0, sigma, (m - n, 3))
        weights = np.vstack([weights, weights[base]])
    points = weights @ np.asarray(curve, dtype=float) + offsets
    return points, weights, offsets


def _ransac_seed(points, config, rng):
    """Best of ransac_trials random pairs, scored by segment-inlier count."""
    n = len(points)
    i = rng.integers(0, n, config.ransac_trials)
    j = rng.integers(0, n - 1, config.ransac_trials)
    j[j >= i] += 1
    best_score, best = -1, None
    for a_idx, b_idx in zip(i, j):
        a, b = points[a_idx], points[b_idx]
        if np.linalg.norm(b - a) < 1e-9:
            continue
        score = int((point_segment_distance(points, a, b) <= config.delete_radius).sum())
        if score > best_score:
            best_score, best = score, (a, b)
    if best is None:
        raise ValueError("could not seed a line (all sampled pairs degenerate)")
    return best


def _pca_line(points):
    """Least-squares line through points: (centroid, unit direction)."""
    c = points.mean(axis=0)
    d = points - c
    _, _, vt = np.linalg.svd(d, full_matrices=False)
    return c, vt[0]


def _extend_seed(points, a, b, radius):
    """Grow a seed chord to the connected collinear run it belongs to."""
    u = b - a
    u = u / np.linalg.norm(u)
    proj = (points - a) @ u
    perp = np.linalg.norm(points - a - proj[:, None] * u, axis=1)
    on_line = perp <= radius
    proj_in = np.sort(proj[on_line])
    # split the projections into runs separated by > 2 * radius gaps and
    # keep the run containing the seed chord (projection 0)
    gaps = np.nonzero(np.diff(proj_in) > 2.0 * radius)[0]
    starts = np.concatenate([[0], gaps + 1])
    ends = np.concatenate([gaps, [len(proj_in) - 1]])
    for s_i, e_i in zip(starts, ends):
        if proj_in[s_i] <= 1e-12 and proj_in[e_i] >= -1e-12:
            return a + proj_in[s_i] * u, a + proj_in[e_i] * u
    return a, b


def fit_single_line(points, config, rng):
    """Fit one segment to part of the cloud: RANSAC seed, connected-run
    extension, then gradient refinement of the endpoints under the
    coarse-weighted Chamfer objective against the segment's inliers.

    Returns (segment (2,3), inlier index array into `points`).
    """
    points = np.asarray(points, dtype=float)
    if len(points) < 2:
        raise ValueError("need at least 2 points to fit a line")
    a, b = _ransac_seed(points, config, rng)
    ts = np.linspace(0.0, 1.0, config.samples_per_curve)
    seg = {"a": a.copy(), "b": b.copy()}
    opt = make_optimizer(config.optimizer, seg, config.coarse_learning_rate)
    idx_st = idx_ts = targets = None
    for step in range(config.coarse_steps):
        if step % config.mask_refresh == 0:
            # re-anchor on the dominant run: least-squares reorientation over
            # the current inliers, then regrow along that line.  An oblique
            # seed's own segment-inlier set would otherwise keep confirming
            # a truncated fit.
            d = point_segment_distance(points, seg["a"], seg["b"])
            inl = np.nonzero(d <= config.delete_radius)[0]
            if len(inl) >= 2:
                c, u = _pca_line(points[inl])
                a2, b2 = _extend_seed(points, c, c + u, config.delete_radius)
                if np.linalg.norm(b2 - a2) > 1e-9:
                    seg["a"][:] = a2
                    seg["b"][:] = b2
            if config.refine_full_cloud:
                inl = np.arange(len(points))
            else:
                d = point_segment_distance(points, seg["a"], seg["b"])
                inl = np.nonzero(d <= config.delete_radius)[0]
            if len(inl) > 0:
                targets = points[inl]
                samples = seg["a"] + ts[:, None] * (seg["b"] - seg["a"])
                idx_st = cKDTree(targets).query(samples)[1]
                idx_ts = cKDTree(samples).query(targets)[1]
            if targets is None:
                break
        samples = seg["a"] + ts[:, None] * (seg["b"] - seg["a"])
        _, grad = _chamfer_fixed(samples, targets, idx_st, idx_ts, config.gamma_coarse)
        opt.step({"a": grad.T @ (1.0 - ts), "b": grad.T @ ts})
    a, b = seg["a"], seg["b"]
    inliers = np.nonzero(point_segment_distance(points, a, b) <= config.delete_radius)[0]
    if len(inliers) >= 2 and np.linalg.norm(b - a) > 1e-9:
        # snap the ends to the extremal inlier projections; the one-sided
        # chamfer equilibrium otherwise leaves them a hair inside the data
        u = (b - a) / np.linalg.norm(b - a)
        proj = (points[inliers] - a) @ u
        a, b = a + proj.min() * u, a + proj.max() * u
        inliers = np.nonzero(point_segment_distance(points, a, b) <= config.delete_radius)[0]
    return np.stack([a, b]), inliers


def coarse_fit(points, config, rng):
    """Greedy fit-and-delete: extract segments until few points remain."""
    points = np.asarray(points, dtype=float)
    if len(points) < config.stop_remaining:
        raise ValueError(
            f"coarse_fit needs at least stop_remaining={config.stop_remaining} points"
        )
    remaining = np.arange(len(points))
    segments = []
    while len(remaining) >= config.stop_remaining:
        seg, inl = fit_single_line(points[remaining], config, rng)
        if len(inl) < 3:
            warnings.warn(
                f"line fitting stalled with {len(remaining)} points left unfit"
            )
            break
        segments.append(seg)
        keep = np.ones(len(remaining), dtype=bool)
        keep[inl] = False
        remaining = remaining[keep]
    # deletion nibbles shared corners off edges fitted later; re-snap every
    # segment's ends against the full cloud to recover them
    snapped = []
    for a, b in segments:
        u = b - a
        norm = np.linalg.norm(u)
        if norm > 1e-9:
            u = u / norm
            inl = point_segment_distance(points, a, b) <= config.delete_radius
            proj = (points[inl] - a) @ u
            a, b = a + proj.min() * u, a + proj.max() * u
        snapped.append(np.stack([a, b]))
    return snapped


def lines_to_beziers(lines):
    """Upgrade segments to cubic Beziers with interior controls at 1/3, 2/3."""
    if len(lines) < 1:
        raise ValueError("need at least one line")
    return np.stack([line_as_bezier(seg[0], seg[1]) for seg in lines])


def endpoint_pairs(curves, d):
    """Unordered pairs of endpoints from different curves within distance d.

    Endpoints are indexed (curve, end) with end 0 / 1 for the first / last
    control point.  Returns an (P, 2, 2) int array.
    """
    curves = np.asarray(curves, dtype=float)
    ends = curves[:, [0, 3], :].reshape(-1, 3)
    n = len(ends)
    ci = np.arange(n) // 2
    pairs = []
    for i in range(n):
        dist = np.linalg.norm(ends[i + 1 :] - ends[i], axis=1)
        for j in np.nonzero(dist <= d)[0] + i + 1:
            if ci[i] != ci[j]:
                pairs.append(((i // 2, i % 2), (j // 2, j % 2)))
    return np.array(pairs, dtype=int).reshape(-1, 2, 2)


def endpoint_loss(curves, d=None, pairs=None):
    """Sum of squared distances over masked endpoint pairs, with gradients.

    Same-curve endpoint pairs are excluded (they would collapse short
    curves).  Returns (loss, gradient (n,4,3)).
    """
    curves = np.asarray(curves, dtype=float)
    if pairs is None:
        if d is None:
            raise ValueError("endpoint_loss needs a distance d or explicit pairs")
        pairs = endpoint_pairs(curves, d)
    grad = np.zeros_like(curves)
    if len(pairs) == 0:
        return 0.0, grad
    rows = np.array([0, 3])
    pa = curves[pairs[:, 0, 0], rows[pairs[:, 0, 1]]]
    pb = curves[pairs[:, 1, 0], rows[pairs[:, 1, 1]]]
    diff = pa - pb
    loss = float((diff * diff).sum())
    np.add.at(grad, (pairs[:, 0, 0], rows[pairs[:, 0, 1]]), 2.0 * diff)
    np.add.at(grad, (pairs[:, 1, 0], rows[pairs[:, 1, 1]]), -2.0 * diff)
    return loss, grad


def fine_fit(curves, target_points, config, rng):
    """Jointly optimize all control points under Chamfer + endpoint welding.

    Dilation offsets are drawn once, so between refreshes the objective is
    deterministic.  Returns the control points with the best refreshed
    Chamfer value seen (never worse than the initial one).
    """
    curves = np.asarray(curves, dtype=float).copy()
    targets = np.asarray(target_points, dtype=float)
    if len(targets) == 0:
        raise ValueError("fine_fit requires target points")
    n, m = len(curves), config.dilated_samples
    weights = np.empty((n, m, 4))
    offsets = np.empty((n, m, 3))
    for i in range(n):
        _, weights[i], offsets[i] = sample_and_dilate(
            curves[i], config.samples_per_curve, m, config.dilation_sigma, rng
        )

    state = {"curves": curves}
    opt = make_optimizer(config.optimizer, state, config.learning_rate)
    tree_t = cKDTree(targets)
    best = (np.inf, curves.copy())
    idx_st = idx_ts = pairs = None

    def current_samples():
        return (
            np.einsum("nmw,nwk->nmk", weights, state["curves"]) + offsets
        ).reshape(-1, 3)

    for step in range(config.fine_steps):
        samples = current_samples()
        if step % config.mask_refresh == 0:
            idx_st = tree_t.query(samples)[1]
            idx_ts = cKDTree(samples).query(targets)[1]
            pairs = endpoint_pairs(state["curves"], config.endpoint_d)
            loss_now = _chamfer_fixed(samples, targets, idx_st, idx_ts, config.gamma_fine)[0]
            if loss_now < best[0]:
                best = (loss_now, state["curves"].copy())
        _, grad_s = _chamfer_fixed(samples, targets, idx_st, idx_ts, config.gamma_fine)
        grad_curves = np.einsum("nmw,nmk->nwk", weights, grad_s.reshape(n, m, 3))
        if config.lambda_ep > 0 and len(pairs):
            _, grad_ep = endpoint_loss(state["curves"], pairs=pairs)
            grad_curves += config.lambda_ep * grad_ep
        opt.step({"curves": grad_curves})
    samples = current_samples()
    idx_st = tree_t.query(samples)[1]
    idx_ts = cKDTree(samples).query(targets)[1]
    loss_final = _chamfer_fixed(samples, targets, idx_st, idx_ts, config.gamma_fine)[0]
    if loss_final < best[0]:
        best = (loss_final, state["curves"].copy())
    return best[1]


def fit_pipeline(points, config, rng):
    """normalize -> coarse lines -> Beziers -> fine fit -> original frame."""
    config.validate()
    points = points.points if isinstance(points, PointCloud) else np.asarray(points, dtype=float)
    if len(points) == 0:
        raise ValueError("cannot fit curves to an empty point cloud")
    pc = normalize_unit(points)
    segments = coarse_fit(pc.points, config, rng)
    if len(segments) == 0:
        raise ValueError("coarse stage produced no lines")
    curves = lines_to_beziers(segments)
    curves = fine_fit(curves, pc.points, config, rng)
    return denormalize(curves.reshape(-1, 3), pc.scale, pc.offset).reshape(-1, 4, 3)


def sample_curveset(curves, spacing):
    """Near-uniform points along every curve (spacing in curve units)."""
    out = []
    for curve in np.asarray(curves, dtype=float):
        approx = bezier_basis_weights(np.linspace(0, 1, 64)) @ curve
        length = float(np.linalg.norm(np.diff(approx, axis=0), axis=1).sum())
        n = max(2, int(np.ceil(length / spacing)) + 1)
        out.append(bezier_basis_weights(np.linspace(0.0, 1.0, n)) @ curve)
    return np.concatenate(out)


def write_curves(path, curves):
    """Structured text: first line the curve count, then 12 reals per curve."""
    curves = np.asarray(curves, dtype=float)
    with open(path, "w") as f:
        f.write(f"{len(curves)}\n")
        for c in curves:
            f.write(" ".join(repr(float(v)) for v in c.reshape(12)))
            f.write("\n")


def read_curves(path):
    with open(path) as f:
        lines = [ln for ln in f.read().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty curves file")
    try:
        n = int(lines[0])
        rows = [[float(v) for v in ln.split()] for ln in lines[1 : n + 1]]
    except ValueError as exc:
        raise ValueError(f"{path}: malformed curves file ({exc})") from exc
    if len(rows) != n or any(len(r) != 12 for r in rows):
        raise ValueError(f"{path}: expected {n} curves of 12 values each")
    return np.array(rows).reshape(n, 4, 3)
