"""Reconstruction of 3D parametric curves from calibrated multi-view 2D edge
maps: a trainable edge-density field optimized by differentiable volume
rendering, grid thresholding into an edge point cloud, and coarse-to-fine
cubic Bezier fitting.
"""

__version__ = "0.1.0"

from .curvefit import FitConfig, fit_pipeline
from .evalmetrics import Metrics, chamfer_eval, evaluate_clouds, prf_iou
from .extract import PointCloud, sample_grid, threshold_points
from .field import EdgeFieldParams, FieldConfig, density_map, field_eval, init_params
from .geom import Camera, Intrinsics, Ray, bezier_point, fibonacci_sphere
from .render import LossWeights, TrainConfig, render_debug_view, train
from .synth import SceneSpec, ViewDataset, make_primitive_scene, render_edge_map

__all__ = [
    "Camera", "EdgeFieldParams", "FieldConfig", "FitConfig", "Intrinsics",
    "LossWeights", "Metrics", "PointCloud", "Ray", "SceneSpec", "TrainConfig",
    "ViewDataset", "bezier_point", "chamfer_eval", "density_map",
    "evaluate_clouds", "fibonacci_sphere", "field_eval", "fit_pipeline",
    "init_params", "make_primitive_scene", "prf_iou", "render_debug_view",
    "render_edge_map", "sample_grid", "threshold_points", "train",
]
