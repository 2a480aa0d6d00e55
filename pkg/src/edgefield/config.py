"""Flat key=value configuration with dotted namespaces.

Precedence: command-line --set overrides > config file > defaults.  Unknown
keys are rejected.  The registry below is the single source of truth for
names, types, defaults, and --help text.
"""

from dataclasses import dataclass

from .curvefit import FitConfig
from .field import FieldConfig
from .render import LossWeights, TrainConfig

# scene-kind parameter names accepted by make_primitive_scene
SCENE_PARAMS = {
    "cube": ("side",),
    "wedge": ("width", "depth", "height"),
    "l_bracket": ("size", "leg", "height"),
    "cylinder": ("radius", "height"),
    "plate_over_box": ("box_size", "plate_size", "plate_thickness", "gap"),
}

_REGISTRY = [
    # key, type, default, help
    ("seed", int, 0, "master seed controlling every stage"),
    ("workers", int, 0, "parallel workers (0: use NEF_WORKERS or 1)"),
    ("synth.kind", str, "cube", "scene kind: " + ", ".join(sorted(SCENE_PARAMS))),
    ("synth.n_views", int, 50, "number of cameras on the view sphere"),
    ("synth.width", int, 800, "edge map width in pixels"),
    ("synth.height", int, 800, "edge map height in pixels"),
    ("synth.fov_deg", float, 60.0, "horizontal field of view, degrees"),
    ("synth.camera_radius", float, 2.0, "camera sphere radius, scene units"),
    ("synth.stroke_px", float, 1.5, "edge stroke radius in pixels"),
    ("synth.dropout", float, 0.0, "fraction of pixels randomly zeroed"),
    ("synth.blur_kernel", int, 0, "Gaussian blur kernel size (odd, 0 = off)"),
    ("scene.side", float, 0.8, "cube edge length"),
    ("scene.width", float, 0.8, "wedge base width"),
    ("scene.depth", float, 0.8, "wedge base depth"),
    ("scene.height", float, 0.5, "wedge / l_bracket / cylinder height"),
    ("scene.size", float, 0.8, "l_bracket outer size"),
    ("scene.leg", float, 0.3, "l_bracket leg thickness"),
    ("scene.radius", float, 0.3, "cylinder radius"),
    ("scene.box_size", float, 0.45, "plate_over_box inner box size"),
    ("scene.plate_size", float, 0.8, "plate_over_box plate side"),
    ("scene.plate_thickness", float, 0.05, "plate_over_box plate thickness"),
    ("scene.gap", float, 0.15, "plate_over_box box-to-plate gap"),
    ("field.backbone_depth", int, 8, "backbone hidden layers"),
    ("field.backbone_width", int, 256, "backbone hidden width"),
    ("field.skip_layer", int, 4, "encoding re-injection layer index"),
    ("field.gray_head_depth", int, 4, "gray head hidden layers"),
    ("field.gray_head_width", int, 256, "gray head hidden width"),
    ("field.pe_position_L", int, 10, "position encoding octaves"),
    ("field.pe_direction_L", int, 4, "direction encoding octaves"),
    ("field.beta", float, 0.8, "density mapping midpoint"),
    ("field.g", float, 10.0, "density mapping sharpness"),
    ("field.alpha_init", float, 30.0, "density scale at initialization"),
    ("field.dtype", str, "float64", "parameter dtype: float64 or float32"),
    ("train.samples_per_ray", int, 64, "stratified samples per ray"),
    ("train.batch_size", int, 1024, "rays per training batch"),
    ("train.learning_rate", float, 5e-4, "Adam learning rate"),
    ("train.epochs", int, 6, "passes over all pixels (if iterations = 0)"),
    ("train.iterations", int, 0, "explicit iteration count (0: from epochs)"),
    ("train.adam_beta1", float, 0.9, "Adam beta1"),
    ("train.adam_beta2", float, 0.999, "Adam beta2"),
    ("train.adam_eps", float, 1e-8, "Adam epsilon"),
    ("train.checkpoint_every", int, 1000, "checkpoint interval, iterations"),
    ("loss.lambda1", float, 1.0, "weight of the rendering error"),
    ("loss.lambda2", float, 1.0, "weight of the density/gray consistency"),
    ("loss.lambda3", float, 0.01, "weight of the sparsity penalty"),
    ("loss.eta", float, 0.3, "edge / non-edge pixel threshold"),
    ("loss.s", float, 0.5, "sparsity (Cauchy) scale"),
    ("loss.use_wmse", bool, True, "class-weight the rendering error"),
    ("extract.resolution", int, 256, "density grid resolution per axis"),
    ("extract.tau", float, 0.7, "edge density binarization threshold"),
    ("fit.gamma_coarse", float, 5.0, "chamfer curve-side weight, coarse stage"),
    ("fit.gamma_fine", float, 1.0, "chamfer curve-side weight, fine stage"),
    ("fit.samples_per_curve", int, 100, "base samples per curve"),
    ("fit.dilated_samples", int, 500, "samples per curve after dilation"),
    ("fit.dilation_sigma", float, 0.01, "dilation noise sigma, normalized"),
    ("fit.stop_remaining", int, 20, "stop coarse stage below this many points"),
    ("fit.delete_radius", float, 0.02, "inlier / deletion radius, normalized"),
    ("fit.endpoint_d_voxels", float, 4.0, "endpoint weld radius, grid voxels"),
    ("fit.grid_resolution", int, 256, "voxel grid the weld radius refers to"),
    ("fit.lambda_ep", float, 0.01, "weight of the endpoint weld term"),
    ("fit.learning_rate", float, 0.5, "fine stage learning rate"),
    ("fit.coarse_learning_rate", float, 0.05, "per-line refinement learning rate"),
    ("fit.ransac_trials", int, 64, "random seed pairs per line"),
    ("fit.coarse_steps", int, 200, "refinement steps per line"),
    ("fit.fine_steps", int, 500, "joint optimization steps"),
    ("fit.mask_refresh", int, 50, "steps between assignment/mask refreshes"),
    ("fit.optimizer", str, "sgd", "curve optimizer: sgd or adam"),
    ("fit.refine_full_cloud", bool, False, "refine lines against the full cloud"),
    ("eval.tau", float, 0.02, "match radius on normalized clouds"),
    ("eval.voxel", float, 1.0 / 128.0, "evaluation downsampling voxel size"),
]

KEYS = {k: (t, d, h) for k, t, d, h in _REGISTRY}


def _parse_value(key, raw):
    typ = KEYS[key][0]
    raw = raw.strip()
    try:
        if typ is bool:
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError("expected a boolean")
        return typ(raw)
    except ValueError as exc:
        raise ValueError(f"config key {key}: cannot parse {raw!r} as {typ.__name__}") from exc


@dataclass
class PipelineConfig:
    values: dict
    explicit: set

    def __getitem__(self, key):
        return self.values[key]

    @property
    def seed(self):
        return self.values["seed"]

    def scene_kwargs(self):
        kind = self.values["synth.kind"]
        if kind not in SCENE_PARAMS:
            raise ValueError(
                f"synth.kind={kind!r} is not one of {sorted(SCENE_PARAMS)}"
            )
        for key in self.explicit:
            if key.startswith("scene.") and key.split(".", 1)[1] not in SCENE_PARAMS[kind]:
                raise ValueError(f"{key} does not apply to scene kind {kind!r}")
        return {p: self.values[f"scene.{p}"] for p in SCENE_PARAMS[kind]}

    def field_config(self):
        v = self.values
        cfg = FieldConfig(
            backbone_depth=v["field.backbone_depth"],
            backbone_width=v["field.backbone_width"],
            skip_layer=v["field.skip_layer"],
            gray_head_depth=v["field.gray_head_depth"],
            gray_head_width=v["field.gray_head_width"],
            pe_position_L=v["field.pe_position_L"],
            pe_direction_L=v["field.pe_direction_L"],
            beta=v["field.beta"],
            g=v["field.g"],
            alpha_init=v["field.alpha_init"],
            dtype=v["field.dtype"],
        )
        cfg.validate()
        return cfg

    def train_config(self):
        v = self.values
        cfg = TrainConfig(
            samples_per_ray=v["train.samples_per_ray"],
            batch_size=v["train.batch_size"],
            learning_rate=v["train.learning_rate"],
            epochs=v["train.epochs"],
            iterations=v["train.iterations"],
            adam_beta1=v["train.adam_beta1"],
            adam_beta2=v["train.adam_beta2"],
            adam_eps=v["train.adam_eps"],
            seed=v["seed"],
            checkpoint_every=v["train.checkpoint_every"],
        )
        cfg.validate()
        return cfg

    def loss_weights(self):
        v = self.values
        w = LossWeights(
            lambda1=v["loss.lambda1"],
            lambda2=v["loss.lambda2"],
            lambda3=v["loss.lambda3"],
            eta=v["loss.eta"],
            s=v["loss.s"],
            use_wmse=v["loss.use_wmse"],
        )
        w.validate()
        return w

    def fit_config(self):
        v = self.values
        grid = v["fit.grid_resolution"]
        if "fit.grid_resolution" not in self.explicit:
            grid = v["extract.resolution"]
        cfg = FitConfig(
            gamma_coarse=v["fit.gamma_coarse"],
            gamma_fine=v["fit.gamma_fine"],
            samples_per_curve=v["fit.samples_per_curve"],
            dilated_samples=v["fit.dilated_samples"],
            dilation_sigma=v["fit.dilation_sigma"],
            stop_remaining=v["fit.stop_remaining"],
            delete_radius=v["fit.delete_radius"],
            endpoint_d_voxels=v["fit.endpoint_d_voxels"],
            grid_resolution=grid,
            lambda_ep=v["fit.lambda_ep"],
            learning_rate=v["fit.learning_rate"],
            coarse_learning_rate=v["fit.coarse_learning_rate"],
            ransac_trials=v["fit.ransac_trials"],
            coarse_steps=v["fit.coarse_steps"],
            fine_steps=v["fit.fine_steps"],
            mask_refresh=v["fit.mask_refresh"],
            optimizer=v["fit.optimizer"],
            refine_full_cloud=v["fit.refine_full_cloud"],
            seed=v["seed"],
        )
        cfg.validate()
        return cfg


def load_config(path=None, overrides=()):
    """Assemble a PipelineConfig from defaults, an optional file, and
    key=value override strings."""
    values = {k: d for k, (_, d, _) in KEYS.items()}
    explicit = set()

    def apply(key, raw, where):
        key = key.strip()
        if key not in KEYS:
            raise ValueError(f"{where}: unknown config key {key!r}")
        values[key] = _parse_value(key, raw)
        explicit.add(key)

    if path:
        with open(path) as f:
            for ln, line in enumerate(f, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{ln}: expected key = value")
                key, raw = line.split("=", 1)
                apply(key, raw, f"{path}:{ln}")
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"--set {item!r}: expected key=value")
        key, raw = item.split("=", 1)
        apply(key, raw, "--set")
    return PipelineConfig(values, explicit)


def registry_help():
    lines = ["configuration keys (defaults in brackets):"]
    for key, typ, default, help_text in _REGISTRY:
        lines.append(f"  {key} = {default!r:<12} {help_text}")
    return "\n".join(lines)
