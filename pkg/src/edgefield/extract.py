"""3D edge-point extraction from a trained field, plus point-cloud utilities
(unit-cube normalization, voxel downsampling, ASCII PLY IO).
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import field as field_mod

DEFAULT_BOUNDS = ((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5))
# evaluation downsampling grid; one point per voxel of the normalized cube
EVAL_VOXEL_SIZE = 1.0 / 128.0


@dataclass
class DensityVolume:
    resolution: int
    bounds: tuple  # ((lo,lo,lo), (hi,hi,hi))
    values: np.ndarray  # (R, R, R) edge densities in [0, 1]


@dataclass
class PointCloud:
    """3D points plus the affine record of a normalization, when applied.

    A normalized cloud satisfies normalized = scale * original + offset.
    """

    points: np.ndarray
    scale: float = None
    offset: np.ndarray = None

    def __len__(self):
        return len(self.points)


def voxel_centers(resolution, bounds=DEFAULT_BOUNDS, axis=None):
    lo = np.asarray(bounds[0], dtype=float)
    hi = np.asarray(bounds[1], dtype=float)
    steps = (hi - lo) / resolution
    lin = [lo[k] + (np.arange(resolution) + 0.5) * steps[k] for k in range(3)]
    if axis is not None:
        return lin[axis]
    grid = np.stack(np.meshgrid(*lin, indexing="ij"), axis=-1)
    return grid.reshape(-1, 3)


def sample_grid(params, resolution, bounds=DEFAULT_BOUNDS, workers=1):
    """Evaluate edge density at every voxel center of a cubic grid."""
    if resolution < 2:
        raise ValueError("grid resolution must be >= 2")
    pts = voxel_centers(resolution, bounds)
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        slabs = np.array_split(pts, workers)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda s: field_mod.edge_density_batch(params, s), slabs))
        values = np.concatenate(parts)
    else:
        values = field_mod.edge_density_batch(params, pts)
    return DensityVolume(resolution, bounds, values.reshape(resolution, resolution, resolution))


def threshold_points(volume, tau=0.7):
    """One point per voxel with edge density above tau, at the voxel center."""
    if not (0 < tau < 1):
        raise ValueError("threshold tau must lie in (0, 1)")
    keep = volume.values > tau
    if not keep.any():
        warnings.warn("thresholding produced an empty point cloud")
        return PointCloud(np.empty((0, 3)))
    idx = np.argwhere(keep)
    lo = np.asarray(volume.bounds[0], dtype=float)
    hi = np.asarray(volume.bounds[1], dtype=float)
    steps = (hi - lo) / volume.resolution
    return PointCloud(lo + (idx + 0.5) * steps)


def normalization_transform(points):
    """(scale, offset) mapping points into [0,1]^3: longest axis spans exactly
    [0,1], the others are centered."""
    points = np.asarray(points, dtype=float)
    if len(points) < 2:
        raise ValueError("normalization needs at least 2 points")
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    extent = hi - lo
    longest = float(extent.max())
    if longest <= 0:
        raise ValueError("cannot normalize a degenerate (single-point) cloud")
    scale = 1.0 / longest
    offset = -scale * lo + (1.0 - scale * extent) / 2.0
    return scale, offset


def normalize_unit(pc):
    """Similarity-transform a cloud into [0,1]^3, recording the transform."""
    points = pc.points if isinstance(pc, PointCloud) else np.asarray(pc, dtype=float)
    scale, offset = normalization_transform(points)
    return PointCloud(points * scale + offset, scale, offset)


def denormalize(points, scale, offset):
    return (np.asarray(points, dtype=float) - offset) / scale


def voxel_downsample(pc, voxel_size):
    """At most one point per voxel: the member nearest its voxel's centroid
    (ties broken by lowest input index).  Output follows first-occurrence
    voxel order, so the result is deterministic."""
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    points = pc.points if isinstance(pc, PointCloud) else np.asarray(pc, dtype=float)
    if len(points) == 0:
        return PointCloud(np.empty((0, 3)))
    keys = np.floor(points / voxel_size).astype(np.int64)
    _, first_idx, inverse = np.unique(
        keys, axis=0, return_index=True, return_inverse=True
    )
    order = np.argsort(first_idx, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    groups = rank[inverse]  # voxel id per point, in first-occurrence order
    n_vox = len(first_idx)
    counts = np.bincount(groups, minlength=n_vox)
    centroids = np.zeros((n_vox, 3))
    for k in range(3):
        centroids[:, k] = np.bincount(groups, weights=points[:, k], minlength=n_vox)
    centroids /= counts[:, None]
    d2 = ((points - centroids[groups]) ** 2).sum(axis=1)
    # lexsort: within a voxel pick smallest distance, then lowest input index
    order2 = np.lexsort((np.arange(len(points)), d2, groups))
    boundaries = np.searchsorted(groups[order2], np.arange(n_vox))
    winners = order2[boundaries]
    return PointCloud(points[winners])


def write_ply(path, points):
    points = np.asarray(points, dtype=float)
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {len(points)}\n")
        f.write("property double x\nproperty double y\nproperty double z\n")
        f.write("end_header\n")
        for p in points:
            f.write(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r}\n")


def read_ply(path):
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ValueError(f"{path}: not a PLY file")
    n = None
    body_at = None
    for i, line in enumerate(lines):
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            n = int(parts[2])
        if line.strip() == "end_header":
            body_at = i + 1
            break
    if n is None or body_at is None:
        raise ValueError(f"{path}: malformed PLY header")
    rows = lines[body_at : body_at + n]
    if len(rows) != n:
        raise ValueError(f"{path}: expected {n} vertices, found {len(rows)}")
    if n == 0:
        return PointCloud(np.empty((0, 3)))
    pts = np.array([[float(v) for v in row.split()[:3]] for row in rows])
    return PointCloud(pts)
