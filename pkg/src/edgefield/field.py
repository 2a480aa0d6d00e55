"""Neural edge-density field.

A positionally encoded MLP maps a 3D point to an edge density E in [0, 1]
(direction-invariant) and, together with the viewing direction, to a gray
edge intensity c in [0, 1].  E is converted to a nonnegative volume density
through a scaled logistic with a trainable log-space scale, so thresholding
E at a fixed value stays meaningful across scenes.

Parameters live in a flat name -> ndarray dict; gradients are computed by
hand-derived reverse-mode passes over the affine/ReLU/sigmoid layers, which
keeps the whole artifact dependency-free and exactly checkable against
finite differences.
"""

import struct
from dataclasses import dataclass, field as dc_field

import numpy as np

from .geom import positional_encoding

CHECKPOINT_MAGIC = b"EDGF"
CHECKPOINT_VERSION = 1

_DTYPE_CODES = {"float64": 0, "float32": 1}
_DTYPE_NAMES = {v: k for k, v in _DTYPE_CODES.items()}

ALPHA_INIT = 30.0


@dataclass
class FieldConfig:
    backbone_depth: int = 8
    backbone_width: int = 256
    skip_layer: int = 4
    gray_head_depth: int = 4
    gray_head_width: int = 256
    pe_position_L: int = 10
    pe_direction_L: int = 4
    beta: float = 0.8
    g: float = 10.0
    alpha_init: float = ALPHA_INIT
    dtype: str = "float64"

    def validate(self):
        if self.backbone_depth < 1 or self.gray_head_depth < 1:
            raise ValueError("network depths must be >= 1")
        if self.backbone_width < 8 or self.gray_head_width < 8:
            raise ValueError("network widths must be >= 8")
        if not (0 < self.beta < 1):
            raise ValueError("beta must lie in (0, 1)")
        if self.g <= 0:
            raise ValueError("g must be positive")
        if self.alpha_init <= 0:
            raise ValueError("alpha_init must be positive")
        if self.dtype not in _DTYPE_CODES:
            raise ValueError(f"dtype must be one of {sorted(_DTYPE_CODES)}")

    @property
    def pos_dim(self):
        return 3 + 6 * self.pe_position_L

    @property
    def dir_dim(self):
        return 3 + 6 * self.pe_direction_L

    def layer_dims(self):
        """(name, fan_in, fan_out) for every affine layer, declaration order."""
        dims = []
        w = self.backbone_width
        for i in range(self.backbone_depth):
            fan_in = self.pos_dim if i == 0 else w
            if i == self.skip_layer and 0 < i < self.backbone_depth:
                fan_in = w + self.pos_dim
            dims.append((f"backbone{i}", fan_in, w))
        dims.append(("density", w, 1))
        gw = self.gray_head_width
        g_in = w + 1 + self.dir_dim
        for i in range(self.gray_head_depth):
            dims.append((f"gray{i}", g_in if i == 0 else gw, gw))
        dims.append(("gray_out", gw, 1))
        return dims


@dataclass
class EdgeFieldParams:
    """All trainable state: layer weights/biases plus the log density scale."""

    config: FieldConfig
    tensors: dict  # name -> ndarray; includes "log_alpha" as a () float64

    @property
    def alpha(self):
        return float(np.exp(self.tensors["log_alpha"]))

    def copy(self):
        return EdgeFieldParams(self.config, {k: v.copy() for k, v in self.tensors.items()})


@dataclass
class FieldOutput:
    edge_density: float
    gray: float
    feature: np.ndarray = dc_field(repr=False, default=None)


def param_names(config):
    names = []
    for name, _, _ in config.layer_dims():
        names += [name + ".W", name + ".b"]
    names.append("log_alpha")
    return names


def init_params(config, rng):
    """Fan-in-scaled uniform init; density scale alpha starts at 30."""
    config.validate()
    dt = np.dtype(config.dtype)
    tensors = {}
    for name, fan_in, fan_out in config.layer_dims():
        bound = 1.0 / np.sqrt(fan_in)
        tensors[name + ".W"] = rng.uniform(-bound, bound, (fan_in, fan_out)).astype(dt)
        tensors[name + ".b"] = rng.uniform(-bound, bound, fan_out).astype(dt)
    tensors["log_alpha"] = np.array(np.log(config.alpha_init), dtype=np.float64)
    return EdgeFieldParams(config, tensors)


def sigmoid(z):
    """Numerically stable logistic."""
    z = np.asarray(z)
    out = np.empty_like(z, dtype=z.dtype if z.dtype.kind == "f" else np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def density_map(E, alpha, beta=0.8, g=10.0):
    """Volume density from edge density: alpha * logistic(g * (E - beta))."""
    return alpha * sigmoid(np.multiply(g, np.subtract(E, beta)))


def _check_dirs(ds):
    norms = np.linalg.norm(ds, axis=-1)
    # tolerance admits float32-normalized directions
    if np.any(np.abs(norms - 1.0) > 1e-5):
        raise ValueError("viewing directions must be unit vectors")


class Workspace:
    """Named reusable buffers for repeated fixed-size forward/backward passes.

    Large fresh allocations are expensive enough here to dominate the
    training loop, so the hot path writes into buffers that persist across
    iterations.  Buffers are keyed by (name, shape, dtype); callers must not
    hold references across calls.
    """

    def __init__(self):
        self._bufs = {}

    def get(self, name, shape, dtype):
        key = (name, shape, np.dtype(dtype).str)
        buf = self._bufs.get(key)
        if buf is None:
            buf = np.empty(shape, dtype)
            self._bufs[key] = buf
        return buf


def field_forward(params, xs, ds, need_cache=False, workspace=None):
    """Batched forward pass.

    Args:
      xs: (N, 3) positions; ds: (N, 3) unit directions.
      workspace: optional Workspace whose buffers are reused (and
        invalidated by the next forward/backward call through it).

    Returns dict with E (N,), c (N,), feature (N, width), and (optionally)
    the per-layer inputs needed for the backward pass.
    """
    cfg = params.config
    xs = np.asarray(xs)
    ds = np.asarray(ds)
    if xs.ndim != 2 or xs.shape[1] != 3 or xs.shape != ds.shape:
        raise ValueError("xs and ds must both have shape (N, 3)")
    if not np.all(np.isfinite(xs)):
        raise ValueError("positions must be finite")
    _check_dirs(ds)
    ws = workspace if workspace is not None else Workspace()
    t = params.tensors
    dt = t["backbone0.W"].dtype
    n = len(xs)

    if xs.dtype != dt:
        buf = ws.get("xs_cast", xs.shape, dt)
        np.copyto(buf, xs, casting="unsafe")
        xs = buf
    if ds.dtype != dt:
        buf = ws.get("ds_cast", ds.shape, dt)
        np.copyto(buf, ds, casting="unsafe")
        ds = buf
    pe_x = ws.get("pe_x", (n, cfg.pos_dim), dt)
    positional_encoding(xs, cfg.pe_position_L, out=pe_x)

    def affine_relu(x, name, fan_out):
        z = ws.get(name + ".out", (n, fan_out), dt)
        np.matmul(x, t[name + ".W"], out=z)
        z += t[name + ".b"]
        np.maximum(z, 0.0, out=z)
        return z

    inputs = {}
    h = pe_x
    w = cfg.backbone_width
    for i in range(cfg.backbone_depth):
        name = f"backbone{i}"
        if i == cfg.skip_layer and 0 < i < cfg.backbone_depth:
            cat = ws.get("skip_in", (n, w + cfg.pos_dim), dt)
            cat[:, :w] = h
            cat[:, w:] = pe_x
            h = cat
        inputs[name] = h
        h = affine_relu(h, name, w)
    feature = h

    zE = ws.get("zE", (n, 1), dt)
    np.matmul(feature, t["density.W"], out=zE)
    zE += t["density.b"]
    E = sigmoid(zE[:, 0])

    g_in = ws.get("g_in", (n, w + 1 + cfg.dir_dim), dt)
    g_in[:, :w] = feature
    g_in[:, w] = E
    positional_encoding(ds, cfg.pe_direction_L, out=g_in[:, w + 1 :])
    h = g_in
    for i in range(cfg.gray_head_depth):
        name = f"gray{i}"
        inputs[name] = h
        h = affine_relu(h, name, cfg.gray_head_width)
    inputs["gray_out"] = h
    zc = ws.get("zc", (n, 1), dt)
    np.matmul(h, t["gray_out.W"], out=zc)
    zc += t["gray_out.b"]
    c = sigmoid(zc[:, 0])

    out = {"E": E, "c": c, "feature": feature}
    if need_cache:
        out["inputs"] = inputs
        out["workspace"] = ws
    return out


def field_backward(params, cache, dE, dc):
    """Parameter gradients given upstream d(loss)/dE and d(loss)/dc, both (N,).

    Returns a dict matching params.tensors (log_alpha gradient is zero here:
    alpha only enters through the density mapping, which callers own).
    Gradient arrays live in the forward cache's workspace and are
    overwritten by the next backward pass through the same workspace.
    """
    cfg = params.config
    t = params.tensors
    inputs = cache["inputs"]
    ws = cache["workspace"]
    dt = t["backbone0.W"].dtype
    grads = {}

    def grad_buf(name):
        gW = ws.get("grad." + name + ".W", t[name + ".W"].shape, dt)
        gb = ws.get("grad." + name + ".b", t[name + ".b"].shape, dt)
        grads[name + ".W"] = gW
        grads[name + ".b"] = gb
        return gW, gb

    def affine_back(d_out, name, inp, need_d_in=True):
        """Accumulate dW/db for an affine layer, return d(input)."""
        gW, gb = grad_buf(name)
        np.matmul(inp.T, d_out, out=gW)
        d_out.sum(axis=0, out=gb)
        if not need_d_in:
            return None
        d_in = ws.get("d." + name + ".in", inp.shape, dt)
        np.matmul(d_out, t[name + ".W"].T, out=d_in)
        return d_in

    def mask_by(d_h, act):
        mask = ws.get("mask" + str(d_h.shape), act.shape, bool)
        np.greater(act, 0.0, out=mask)
        d_h *= mask

    E = cache["E"]
    c = cache["c"]
    n = len(E)
    dzc = ws.get("dzc", (n, 1), dt)
    np.multiply(np.asarray(dc) * c, 1.0 - c, out=dzc[:, 0], casting="unsafe")

    # gray head: output layer, then hidden layers back to the head input.
    # The cached input of each layer is the ReLU output of the previous one,
    # so it doubles as that layer's activation mask.
    d_h = affine_back(dzc, "gray_out", inputs["gray_out"])
    for i in reversed(range(cfg.gray_head_depth)):
        name = f"gray{i}"
        out_i = inputs["gray_out" if i == cfg.gray_head_depth - 1 else f"gray{i + 1}"]
        mask_by(d_h, out_i)
        d_h = affine_back(d_h, name, inputs[name])
    width = cfg.backbone_width
    d_feature = ws.get("d_feature", (n, width), dt)
    d_feature[:] = d_h[:, :width]
    dE_total = np.asarray(dE) + d_h[:, width]

    dzE = ws.get("dzE", (n, 1), dt)
    np.multiply(dE_total * E, 1.0 - E, out=dzE[:, 0], casting="unsafe")
    gW, gb = grad_buf("density")
    np.matmul(cache["feature"].T, dzE, out=gW)
    dzE.sum(axis=0, out=gb)
    d_feature += dzE @ t["density.W"].T

    def backbone_output(i):
        if i == cfg.backbone_depth - 1:
            return cache["feature"]
        nxt = inputs[f"backbone{i + 1}"]
        if i + 1 == cfg.skip_layer and 0 < i + 1 < cfg.backbone_depth:
            return nxt[:, :width]
        return nxt

    d_h = d_feature
    for i in reversed(range(cfg.backbone_depth)):
        name = f"backbone{i}"
        mask_by(d_h, backbone_output(i))
        # layer 0 consumes the (non-trainable) encoding: d(input) is dead
        d_h = affine_back(d_h, name, inputs[name], need_d_in=i > 0)
        if i == cfg.skip_layer and 0 < i < cfg.backbone_depth:
            trimmed = ws.get("d_skip", (n, width), dt)
            trimmed[:] = d_h[:, :width]
            d_h = trimmed
    grads["log_alpha"] = np.zeros((), dtype=np.float64)
    return grads


def field_eval(params, x, d):
    """Evaluate the field at a single point/direction."""
    out = field_forward(params, np.asarray(x, dtype=float)[None], np.asarray(d, dtype=float)[None])
    return FieldOutput(float(out["E"][0]), float(out["c"][0]), out["feature"][0])


def field_eval_batch_with_grad(params, xs, ds, dE, dc):
    """Forward plus exact parameter gradients of sum(dE*E + dc*c)."""
    xs = np.asarray(xs)
    if xs.ndim != 2 or xs.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    dE = np.asarray(dE, dtype=float)
    dc = np.asarray(dc, dtype=float)
    if dE.shape != (xs.shape[0],) or dc.shape != (xs.shape[0],):
        raise ValueError("upstream gradients must be one scalar per output")
    cache = field_forward(params, xs, ds, need_cache=True)
    grads = field_backward(params, cache, dE, dc)
    return (cache["E"], cache["c"]), grads


def edge_density_batch(params, xs, chunk=65536, workspace=None):
    """Edge density only (skips the gray head; E is direction-invariant)."""
    cfg = params.config
    t = params.tensors
    dt = t["backbone0.W"].dtype
    ws = workspace if workspace is not None else Workspace()
    xs = np.asarray(xs)
    out = np.empty(len(xs))
    for s in range(0, len(xs), chunk):
        piece = xs[s : s + chunk].astype(dt, copy=False)
        n = len(piece)
        pe_x = ws.get("pe_x", (n, cfg.pos_dim), dt)
        positional_encoding(piece, cfg.pe_position_L, out=pe_x)
        h = pe_x
        for i in range(cfg.backbone_depth):
            name = f"backbone{i}"
            if i == cfg.skip_layer and 0 < i < cfg.backbone_depth:
                cat = ws.get("skip_in", (n, cfg.backbone_width + cfg.pos_dim), dt)
                cat[:, : cfg.backbone_width] = h
                cat[:, cfg.backbone_width :] = pe_x
                h = cat
            z = ws.get(name + ".out", (n, cfg.backbone_width), dt)
            np.matmul(h, t[name + ".W"], out=z)
            z += t[name + ".b"]
            np.maximum(z, 0.0, out=z)
            h = z
        zE = h @ t["density.W"] + t["density.b"]
        out[s : s + chunk] = sigmoid(zE[:, 0])
    return out


# ---------------------------------------------------------------------------
# checkpoint IO: versioned binary blob, parameter arrays as little-endian
# float32 in declaration order, log_alpha as float64.

def save_checkpoint(params, path):
    cfg = params.config
    header = struct.pack(
        "<4sI7IB3d",
        CHECKPOINT_MAGIC,
        CHECKPOINT_VERSION,
        cfg.backbone_depth,
        cfg.backbone_width,
        cfg.skip_layer,
        cfg.gray_head_depth,
        cfg.gray_head_width,
        cfg.pe_position_L,
        cfg.pe_direction_L,
        _DTYPE_CODES[cfg.dtype],
        cfg.beta,
        cfg.g,
        cfg.alpha_init,
    )
    with open(path, "wb") as f:
        f.write(header)
        for name in param_names(cfg):
            if name == "log_alpha":
                continue
            f.write(params.tensors[name].astype("<f4").tobytes())
        f.write(struct.pack("<d", float(params.tensors["log_alpha"])))


def load_checkpoint(path):
    with open(path, "rb") as f:
        blob = f.read()
    head_fmt = "<4sI7IB3d"
    head_size = struct.calcsize(head_fmt)
    if len(blob) < head_size or blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not an edge-field checkpoint (bad magic)")
    fields = struct.unpack(head_fmt, blob[:head_size])
    if fields[1] != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {fields[1]}")
    cfg = FieldConfig(
        backbone_depth=fields[2],
        backbone_width=fields[3],
        skip_layer=fields[4],
        gray_head_depth=fields[5],
        gray_head_width=fields[6],
        pe_position_L=fields[7],
        pe_direction_L=fields[8],
        dtype=_DTYPE_NAMES[fields[9]],
        beta=fields[10],
        g=fields[11],
        alpha_init=fields[12],
    )
    cfg.validate()
    dt = np.dtype(cfg.dtype)
    tensors = {}
    off = head_size
    for name, fan_in, fan_out in cfg.layer_dims():
        for suffix, shape in ((".W", (fan_in, fan_out)), (".b", (fan_out,))):
            count = int(np.prod(shape))
            raw = blob[off : off + 4 * count]
            if len(raw) != 4 * count:
                raise ValueError(f"{path}: truncated checkpoint")
            tensors[name + suffix] = (
                np.frombuffer(raw, dtype="<f4").astype(dt).reshape(shape)
            )
            off += 4 * count
    if len(blob) != off + 8:
        raise ValueError(f"{path}: truncated checkpoint")
    tensors["log_alpha"] = np.array(struct.unpack("<d", blob[off:])[0], dtype=np.float64)
    return EdgeFieldParams(cfg, tensors)
