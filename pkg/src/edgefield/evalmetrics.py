"""Quantitative comparison of predicted vs ground-truth edge point clouds:
Chamfer distance, precision / recall / F-score, and IoU at a match radius.

Points are compared after mapping both clouds through one shared similarity
transform into [0,1]^3 (shared, so relative geometry is preserved) and
voxel-downsampling each; a predicted point is matched when some ground-truth
point lies strictly within the radius tau, and vice versa.
"""

import csv
import os
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .extract import EVAL_VOXEL_SIZE, normalization_transform, voxel_downsample

DEFAULT_TAU = 0.02

METRIC_FIELDS = ("cd", "precision", "recall", "f_score", "iou")


@dataclass
class Metrics:
    cd: float
    precision: float
    recall: float
    f_score: float
    iou: float
    tau: float = DEFAULT_TAU
    empty_pred: bool = False

    def as_dict(self):
        return {k: getattr(self, k) for k in METRIC_FIELDS}


def _points(cloud):
    pts = getattr(cloud, "points", cloud)
    return np.asarray(pts, dtype=float)


def _nn_dists(query, reference, method):
    """Distance from each query point to its nearest reference point.

    The spatial index only selects the neighbor; the distance itself is
    recomputed with the same expression as the brute-force path so the two
    methods agree bit-for-bit.
    """
    if method == "kdtree":
        idx = cKDTree(reference).query(query)[1]
        diff = query - reference[idx]
        return np.sqrt((diff * diff).sum(axis=1))
    if method == "brute":
        out = np.empty(len(query))
        for i, q in enumerate(query):
            diff = query[i] - reference
            out[i] = np.sqrt((diff * diff).sum(axis=1)).min()
        return out
    raise ValueError(f"unknown nearest-neighbor method {method!r}")


def chamfer_eval(pred, gt, method="kdtree"):
    """Symmetric unsquared Chamfer distance: mean NN distance each way, summed."""
    p = _points(pred)
    g = _points(gt)
    if len(p) == 0 or len(g) == 0:
        raise ValueError("chamfer_eval requires two non-empty clouds")
    return float(_nn_dists(p, g, method).mean() + _nn_dists(g, p, method).mean())


def prf_iou(pred, gt, tau=DEFAULT_TAU, method="kdtree"):
    """Precision/recall/F-score/IoU at match radius tau, plus Chamfer.

    Empty predictions yield all-zero scores with the empty_pred flag set.
    """
    p = _points(pred)
    g = _points(gt)
    if len(g) == 0:
        raise ValueError("prf_iou requires a non-empty ground-truth cloud")
    if len(p) == 0:
        return Metrics(float("inf"), 0.0, 0.0, 0.0, 0.0, tau, empty_pred=True)
    dp = _nn_dists(p, g, method)
    dg = _nn_dists(g, p, method)
    m_p = int((dp < tau).sum())
    m_g = int((dg < tau).sum())
    precision = m_p / len(p)
    recall = m_g / len(g)
    f_score = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    iou = (m_p + m_g) / (2 * (len(p) + len(g)) - (m_p + m_g))
    cd = float(dp.mean() + dg.mean())
    return Metrics(cd, precision, recall, f_score, iou, tau)


def evaluate_clouds(pred, gt, tau=DEFAULT_TAU, voxel=EVAL_VOXEL_SIZE, method="kdtree"):
    """Full evaluation protocol: shared normalization into [0,1]^3, voxel
    downsampling of both clouds, then metrics at radius tau."""
    p = _points(pred)
    g = _points(gt)
    if len(p) == 0:
        return Metrics(float("inf"), 0.0, 0.0, 0.0, 0.0, tau, empty_pred=True)
    scale, offset = normalization_transform(np.vstack([p, g]))
    p_n = voxel_downsample(p * scale + offset, voxel).points
    g_n = voxel_downsample(g * scale + offset, voxel).points
    return prf_iou(p_n, g_n, tau, method)


def write_report(metrics, txt_path=None, csv_path=None, append=False):
    """metric=value lines, and a machine-readable CSV row."""
    if txt_path:
        with open(txt_path, "w") as f:
            for k in METRIC_FIELDS:
                f.write(f"{k}={getattr(metrics, k)!r}\n")
    if csv_path:
        header = not (append and os.path.exists(csv_path))
        with open(csv_path, "a" if append else "w", newline="") as f:
            writer = csv.writer(f)
            if header:
                writer.writerow(METRIC_FIELDS)
            writer.writerow([repr(float(getattr(metrics, k))) for k in METRIC_FIELDS])


def read_report(path):
    out = {}
    with open(path) as f:
        for line in f:
            if "=" in line:
                k, v = line.strip().split("=", 1)
                out[k] = float(v)
    return out
