"""Differentiable volume rendering of gray edge images, the training losses,
and the training loop.

Rendering uses standard alpha compositing over stratified samples:
a_i = 1 - exp(-sigma_i * delta_i), T_i = prod_{j<i}(1 - a_j), w_i = T_i a_i,
rendered gray = sum w_i c_i, depth = sum w_i t_i (unnormalized, so empty
space renders as depth 0).

The loss is a weighted rendering error (per-batch inverse class frequency,
counteracting how few pixels are edges), a per-sample consistency penalty
tying edge density to gray intensity (so occluded edges survive views that
cannot see them), and a Cauchy sparsity penalty on densities along rays of
non-edge pixels.  All three are computed as batch means.
"""

import csv
import os
from dataclasses import dataclass

import numpy as np

from . import field as field_mod
from .field import sigmoid
from .optim import Adam


@dataclass
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 0.01
    eta: float = 0.3
    s: float = 0.5
    use_wmse: bool = True  # False gives the plain unweighted rendering error

    def validate(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("loss weights must be nonnegative")
        if not (0 <= self.eta < 1) or self.s <= 0:
            raise ValueError("require 0 <= eta < 1 and s > 0")


@dataclass
class TrainConfig:
    samples_per_ray: int = 64
    batch_size: int = 1024
    learning_rate: float = 5e-4
    epochs: int = 6
    iterations: int = 0  # 0 means derive from epochs
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 1000

    def validate(self):
        if self.samples_per_ray < 1 or self.batch_size < 1:
            raise ValueError("counts must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 0 or self.iterations < 0:
            raise ValueError("epochs and iterations must be nonnegative")

    def resolve_iterations(self, total_pixels):
        """Explicit iteration count wins; otherwise derive from epochs.
        epochs = 0 with iterations = 0 means no training at all."""
        if self.iterations > 0:
            return self.iterations
        return self.epochs * int(np.ceil(total_pixels / self.batch_size))


def composite(sigma, c, ts, t_far):
    """Alpha-composite per-ray samples.

    Args:
      sigma, c, ts: (B, S) densities, gray values, sorted sample depths.
      t_far: scalar or (B,) far bound (sets the final interval width).

    Returns dict with deltas, a, T, w, C_hat, depth (arrays as above,
    C_hat/depth of shape (B,)).
    """
    sigma = np.asarray(sigma, dtype=float)
    c = np.asarray(c, dtype=float)
    ts = np.asarray(ts, dtype=float)
    t_far = np.broadcast_to(np.asarray(t_far, dtype=float), (ts.shape[0],))
    deltas = np.concatenate([np.diff(ts, axis=1), (t_far - ts[:, -1])[:, None]], axis=1)
    a = -np.expm1(-sigma * deltas)
    trans = np.cumprod(1.0 - a, axis=1)
    T = np.concatenate([np.ones((ts.shape[0], 1)), trans[:, :-1]], axis=1)
    w = T * a
    C_hat = (w * c).sum(axis=1)
    depth = (w * ts).sum(axis=1)
    return {
        "deltas": deltas, "a": a, "T": T, "w": w,
        "C_hat": C_hat, "depth": depth, "sigma": sigma, "c": c, "ts": ts,
    }


def composite_backward(comp, dC_hat):
    """Gradients of sum(dC_hat * C_hat) w.r.t. per-sample sigma and c."""
    w, c, T, a, deltas = comp["w"], comp["c"], comp["T"], comp["a"], comp["deltas"]
    dC = np.asarray(dC_hat, dtype=float)[:, None]
    dc = dC * w
    wc = w * c
    # suffix-exclusive sum of w_j c_j over j > i
    suffix = wc.sum(axis=1, keepdims=True) - np.cumsum(wc, axis=1)
    dsigma = dC * deltas * (T * (1.0 - a) * c - suffix)
    return dsigma, dc


def render_ray(params, ray, n_samples, rng):
    """Render a single ray; returns per-sample records plus C_hat and depth."""
    if n_samples < 1:
        raise ValueError("need at least one sample")
    from .geom import stratified_samples

    ts = stratified_samples(ray, n_samples, rng)
    pts = ray.origin[None, :] + ts[:, None] * ray.direction[None, :]
    dirs = np.broadcast_to(ray.direction, pts.shape)
    out = field_mod.field_forward(params, pts, dirs)
    E = out["E"].astype(float)
    cfg = params.config
    sigma = field_mod.density_map(E, params.alpha, cfg.beta, cfg.g)
    comp = composite(sigma[None, :], out["c"][None, :].astype(float), ts[None, :], ray.t_far)
    return {
        "ts": ts, "deltas": comp["deltas"][0], "E": E, "c": out["c"].astype(float),
        "sigma": sigma, "w": comp["w"][0],
        "C_hat": float(comp["C_hat"][0]), "depth": float(comp["depth"][0]),
    }


def wmse_loss(C_hat, C_gt, eta=0.3, use_weights=True):
    """Class-weighted mean squared rendering error.

    Rays with ground truth above eta are edge rays; each class is weighted
    by the other class's share of the batch, so scarce edge pixels are not
    drowned out.  Returns (loss, dloss/dC_hat).
    """
    C_hat = np.asarray(C_hat, dtype=float)
    C_gt = np.asarray(C_gt, dtype=float)
    n = C_hat.size
    if n == 0:
        raise ValueError("wmse_loss on an empty batch")
    if use_weights:
        edge = C_gt > eta
        n_edge = int(edge.sum())
        weights = np.where(edge, (n - n_edge) / n, n_edge / n)
    else:
        weights = np.ones(n)
    resid = C_hat - C_gt
    loss = float(np.mean(weights * resid * resid))
    return loss, 2.0 * weights * resid / n


def consistency_loss(E, c):
    """Mean squared gap between edge density and gray over all samples."""
    E = np.asarray(E, dtype=float)
    c = np.asarray(c, dtype=float)
    diff = E - c
    m = diff.size
    if m == 0:
        return 0.0, np.zeros_like(E), np.zeros_like(c)
    loss = float(np.mean(diff * diff))
    dE = 2.0 * diff / m
    return loss, dE, -dE


def sparsity_loss(E, s=0.5):
    """Cauchy penalty log(1 + E^2/s), averaged over the given samples."""
    if s <= 0:
        raise ValueError("sparsity scale s must be positive")
    E = np.asarray(E, dtype=float)
    m = E.size
    if m == 0:
        return 0.0, np.zeros_like(E)
    q = E * E / s
    loss = float(np.mean(np.log1p(q)))
    dE = (2.0 * E / s) / (1.0 + q) / m
    return loss, dE


def total_loss(wmse, consistency, sparsity, weights):
    return weights.lambda1 * wmse + weights.lambda2 * consistency + weights.lambda3 * sparsity


class _FlatViews:
    """Dataset flattened for uniform pixel sampling across all views."""

    def __init__(self, dataset):
        if len(dataset.views) < 1:
            raise ValueError("training requires at least one view")
        cams = [cam for cam, _ in dataset.views]
        self.h = cams[0].height
        self.w = cams[0].width
        self.gray = np.stack([em for _, em in dataset.views]).reshape(len(cams), -1)
        self.centers = np.stack([c.translation for c in cams])
        self.rotations = np.stack([c.rotation for c in cams])
        self.fx = np.array([c.fx for c in cams])
        self.fy = np.array([c.fy for c in cams])
        self.cx = np.array([c.cx for c in cams])
        self.cy = np.array([c.cy for c in cams])
        self.t_near = np.array([c.t_near for c in cams])
        self.t_far = np.array([c.t_far for c in cams])
        self.total = self.gray.size

    def rays_for(self, flat_idx):
        """Ray origins/directions/bounds and gt gray for flat pixel indices."""
        v, rem = np.divmod(flat_idx, self.h * self.w)
        py, px = np.divmod(rem, self.w)
        d_cam = np.stack(
            [
                (px + 0.5 - self.cx[v]) / self.fx[v],
                (py + 0.5 - self.cy[v]) / self.fy[v],
                np.ones(len(v)),
            ],
            axis=1,
        )
        dirs = np.einsum("bij,bj->bi", self.rotations[v], d_cam)
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        return self.centers[v], dirs, self.t_near[v], self.t_far[v], self.gray[v, rem]


def _loss_and_grads(params, origins, dirs, t_near, t_far, gray, n_samples,
                    weights, rng, workspace=None):
    """One batch: render, evaluate the three losses, backprop to parameters."""
    B = len(origins)
    S = n_samples
    ws = workspace if workspace is not None else field_mod.Workspace()
    jitter = rng.random((B, S))
    step = ((t_far - t_near) / S)[:, None]
    ts = t_near[:, None] + (np.arange(S) + jitter) * step

    pts = ws.get("ray_pts", (B, S, 3), float)
    np.multiply(ts[..., None], dirs[:, None, :], out=pts)
    pts += origins[:, None, :]
    dirs_flat = ws.get("ray_dirs", (B, S, 3), float)
    dirs_flat[:] = dirs[:, None, :]
    cache = field_mod.field_forward(
        params, pts.reshape(-1, 3), dirs_flat.reshape(-1, 3), need_cache=True, workspace=ws
    )
    E = cache["E"].reshape(B, S).astype(float)
    c = cache["c"].reshape(B, S).astype(float)

    cfg = params.config
    log_alpha = float(params.tensors["log_alpha"])
    alpha = np.exp(log_alpha)
    sshape = sigmoid(cfg.g * (E - cfg.beta))
    sigma = alpha * sshape

    comp = composite(sigma, c, ts, t_far)
    wmse, dC = wmse_loss(comp["C_hat"], gray, weights.eta, weights.use_wmse)
    cons, dE_cons, dc_cons = consistency_loss(E, c)
    nonedge = gray <= weights.eta
    spars, dE_spars_sel = sparsity_loss(E[nonedge], weights.s)

    dsigma, dc_comp = composite_backward(comp, weights.lambda1 * dC)
    dE = dsigma * (alpha * cfg.g * sshape * (1.0 - sshape))
    dE += weights.lambda2 * dE_cons
    dE_sp = np.zeros_like(E)
    dE_sp[nonedge] = dE_spars_sel
    dE += weights.lambda3 * dE_sp
    dc = dc_comp + weights.lambda2 * dc_cons
    d_log_alpha = float((dsigma * sigma).sum())

    grads = field_mod.field_backward(params, cache, dE.reshape(-1), dc.reshape(-1))
    grads["log_alpha"] = grads["log_alpha"] + d_log_alpha
    losses = {
        "wmse": wmse,
        "consistency": cons,
        "sparsity": spars,
        "total": total_loss(wmse, cons, spars, weights),
    }
    return losses, grads


def train(dataset, field_config, train_config, loss_weights=None, out_dir=None,
          params=None, start_iteration=0):
    """Optimize edge-field parameters on a view dataset.

    Each iteration draws batch_size pixels uniformly across all views,
    renders their rays with stratified sampling, and applies one Adam step.
    Deterministic for a fixed seed.  Returns (params, history) where history
    holds one dict per iteration (iteration, wmse, consistency, sparsity,
    total, alpha).

    Raises RuntimeError with diagnostics if the loss goes non-finite.
    """
    loss_weights = loss_weights or LossWeights()
    train_config.validate()
    loss_weights.validate()
    flat = _FlatViews(dataset)
    rng = np.random.default_rng(train_config.seed)
    if params is None:
        params = field_mod.init_params(field_config, rng)
    opt = Adam(
        params.tensors,
        train_config.learning_rate,
        train_config.adam_beta1,
        train_config.adam_beta2,
        train_config.adam_eps,
    )
    iterations = train_config.resolve_iterations(flat.total)
    history = []
    workspace = field_mod.Workspace()
    for it in range(start_iteration + 1, start_iteration + iterations + 1):
        idx = rng.integers(0, flat.total, train_config.batch_size)
        origins, dirs, t_near, t_far, gray = flat.rays_for(idx)
        losses, grads = _loss_and_grads(
            params, origins, dirs, t_near, t_far, gray,
            train_config.samples_per_ray, loss_weights, rng, workspace,
        )
        if not np.isfinite(losses["total"]):
            raise RuntimeError(
                f"non-finite loss at iteration {it}: "
                f"wmse={losses['wmse']} consistency={losses['consistency']} "
                f"sparsity={losses['sparsity']}"
            )
        opt.step(grads)
        row = {"iteration": it, **losses, "alpha": params.alpha}
        history.append(row)
        if out_dir and train_config.checkpoint_every > 0 and it % train_config.checkpoint_every == 0:
            field_mod.save_checkpoint(params, os.path.join(out_dir, "checkpoint.efc"))
    return params, history


def write_loss_csv(path, history, append=False):
    mode = "a" if append and os.path.exists(path) else "w"
    with open(path, mode, newline="") as f:
        writer = csv.writer(f)
        if mode == "w":
            writer.writerow(["iteration", "wmse", "consistency", "sparsity", "total", "alpha"])
        for row in history:
            writer.writerow(
                [row["iteration"]]
                + [repr(float(row[k])) for k in ("wmse", "consistency", "sparsity", "total", "alpha")]
            )


def read_loss_csv(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return [
        {k: (int(v) if k == "iteration" else float(v)) for k, v in row.items()}
        for row in rows
    ]


def render_debug_view(params, camera, n_samples, seed=0, chunk=8192):
    """Render full edge and depth images from a camera.

    Returns (edge_image, depth_raw, depth_display); depth_display is
    depth_raw min-max normalized to [0, 1].  Deterministic for a fixed seed.
    """
    h, w = camera.height, camera.width
    ys, xs = np.mgrid[0:h, 0:w]
    d_cam = np.stack(
        [
            (xs.ravel() + 0.5 - camera.cx) / camera.fx,
            (ys.ravel() + 0.5 - camera.cy) / camera.fy,
            np.ones(h * w),
        ],
        axis=1,
    )
    dirs = d_cam @ camera.rotation.T
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    rng = np.random.default_rng(seed)
    edge = np.empty(h * w)
    depth = np.empty(h * w)
    cfg = params.config
    alpha = params.alpha
    S = n_samples
    step = (camera.t_far - camera.t_near) / S
    workspace = field_mod.Workspace()
    for s in range(0, h * w, chunk):
        d = dirs[s : s + chunk]
        B = len(d)
        ts = camera.t_near + (np.arange(S) + rng.random((B, S))) * step
        pts = (camera.translation[None, None, :] + ts[..., None] * d[:, None, :]).reshape(-1, 3)
        out = field_mod.field_forward(params, pts, np.repeat(d, S, axis=0), workspace=workspace)
        E = out["E"].reshape(B, S).astype(float)
        c = out["c"].reshape(B, S).astype(float)
        sigma = field_mod.density_map(E, alpha, cfg.beta, cfg.g)
        comp = composite(sigma, c, ts, camera.t_far)
        edge[s : s + chunk] = comp["C_hat"]
        depth[s : s + chunk] = comp["depth"]
    edge = edge.reshape(h, w)
    depth = depth.reshape(h, w)
    span = depth.max() - depth.min()
    display = (depth - depth.min()) / span if span > 0 else np.zeros_like(depth)
    return edge, depth, display
