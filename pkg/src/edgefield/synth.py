"""Procedural ground-truth scenes and analytic multi-view edge-map rendering.

A scene is a network of cubic Bezier feature curves lying on a watertight
triangle mesh (the occluder).  Edge maps are rendered by sampling each curve
densely, testing per-sample visibility against the occluder mesh
(hidden-line removal), and splatting visible samples as anti-aliased disks.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import convolve1d

from . import geom

# Self-occlusion bias: curves lie on the occluder surface, so an intersection
# closer than the sample by less than this ray-length tolerance is ignored.
EPS_OCC = 1e-4

# Quarter-circle cubic Bezier tangent-handle constant.
CIRCLE_KAPPA = 0.5523

SCENE_KINDS = ("cube", "wedge", "l_bracket", "cylinder", "plate_over_box")


@dataclass
class SceneSpec:
    """Ground-truth curve network plus its occluder mesh."""

    name: str
    curves: list  # list of (4, 3) control-point arrays
    vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3) int

    @property
    def triangles(self):
        return self.vertices[self.faces]


@dataclass
class ViewDataset:
    """Calibrated cameras paired with grayscale edge maps; the training input."""

    scene_name: str
    views: list  # list of (Camera, (H, W) float array in [0, 1])
    gt_curves: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.views) >= 1:
            h, w = self.views[0][1].shape
            for _, em in self.views:
                if em.shape != (h, w):
                    raise ValueError("all edge maps in a dataset must share dimensions")


def _box_mesh(center, size):
    """Axis-aligned box: 8 vertices, 12 triangles (outward-facing)."""
    c = np.asarray(center, dtype=float)
    h = np.asarray(size, dtype=float) / 2.0
    corners = np.array(
        [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float
    )
    verts = c + corners * h
    # quads by fixed axis, split into triangles
    quads = [
        (0, 1, 3, 2),  # x = -1
        (4, 6, 7, 5),  # x = +1
        (0, 4, 5, 1),  # y = -1
        (2, 3, 7, 6),  # y = +1
        (0, 2, 6, 4),  # z = -1
        (1, 5, 7, 3),  # z = +1
    ]
    faces = []
    for a, b, c2, d in quads:
        faces.append((a, b, c2))
        faces.append((a, c2, d))
    return verts, np.array(faces, dtype=int)


def _box_edge_curves(center, size):
    c = np.asarray(center, dtype=float)
    h = np.asarray(size, dtype=float) / 2.0
    lo, hi = c - h, c + h
    xs, ys, zs = (lo[0], hi[0]), (lo[1], hi[1]), (lo[2], hi[2])
    curves = []
    for y in ys:
        for z in zs:
            curves.append(geom.line_as_bezier((xs[0], y, z), (xs[1], y, z)))
    for x in xs:
        for z in zs:
            curves.append(geom.line_as_bezier((x, ys[0], z), (x, ys[1], z)))
    for x in xs:
        for y in ys:
            curves.append(geom.line_as_bezier((x, y, zs[0]), (x, y, zs[1])))
    return curves


def _prism_from_polygon(poly_xz, y0, y1):
    """Extrude a simple polygon (counterclockwise in the xz plane) along y.

    Returns (curves, vertices, faces).  Top/bottom faces are fan-triangulated
    from vertex 0, which is correct for the convex and L-shaped outlines used
    here (vertex 0 is chosen so every fan diagonal stays inside).
    """
    poly = np.asarray(poly_xz, dtype=float)
    k = len(poly)
    bot = np.column_stack([poly[:, 0], np.full(k, y0), poly[:, 1]])
    top = np.column_stack([poly[:, 0], np.full(k, y1), poly[:, 1]])
    verts = np.vstack([bot, top])
    faces = []
    for i in range(1, k - 1):
        faces.append((0, i + 1, i))  # bottom, facing -y
        faces.append((k, k + i, k + i + 1))  # top, facing +y
    for i in range(k):
        j = (i + 1) % k
        faces.append((i, j, k + j))
        faces.append((i, k + j, k + i))
    curves = []
    for ring in (bot, top):
        for i in range(k):
            curves.append(geom.line_as_bezier(ring[i], ring[(i + 1) % k]))
    for i in range(k):
        curves.append(geom.line_as_bezier(bot[i], top[i]))
    return curves, verts, np.array(faces, dtype=int)


def _circle_arcs(center, radius, y):
    """A circle in the y-plane as 4 cubic Bezier quarter arcs."""
    cx, cz = center
    k = CIRCLE_KAPPA * radius
    quarter_points = [
        ((radius, 0), (radius, k), (k, radius), (0, radius)),
        ((0, radius), (-k, radius), (-radius, k), (-radius, 0)),
        ((-radius, 0), (-radius, -k), (-k, -radius), (0, -radius)),
        ((0, -radius), (k, -radius), (radius, -k), (radius, 0)),
    ]
    arcs = []
    for quad in quarter_points:
        arcs.append(np.array([[cx + px, y, cz + pz] for px, pz in quad]))
    return arcs


def _cylinder_mesh(radius, height, segments_per_arc=64):
    """Cylinder whose rim rings sample the Bezier arcs exactly.

    Sampling the mesh rings on the arcs (rather than the true circle) keeps
    the ground-truth rim curves strictly outside the chord surface, so the
    self-occlusion bias never culls them.
    """
    y0, y1 = -height / 2.0, height / 2.0
    arcs = _circle_arcs((0.0, 0.0), radius, 0.0)
    ts = np.linspace(0.0, 1.0, segments_per_arc + 1)[:-1]
    ring = np.vstack([geom.bezier_point(a, ts) for a in arcs])[:, [0, 2]]
    k = len(ring)
    bot = np.column_stack([ring[:, 0], np.full(k, y0), ring[:, 1]])
    top = np.column_stack([ring[:, 0], np.full(k, y1), ring[:, 1]])
    cb = np.array([0.0, y0, 0.0])
    ct = np.array([0.0, y1, 0.0])
    verts = np.vstack([bot, top, cb[None], ct[None]])
    ib, it = 2 * k, 2 * k + 1
    faces = []
    for i in range(k):
        j = (i + 1) % k
        faces.append((i, j, k + j))
        faces.append((i, k + j, k + i))
        faces.append((ib, j, i))
        faces.append((it, k + i, k + j))
    curves = _circle_arcs((0.0, 0.0), radius, y0) + _circle_arcs((0.0, 0.0), radius, y1)
    return curves, verts, np.array(faces, dtype=int)


def make_primitive_scene(kind, **params):
    """Construct one of the built-in ground-truth scenes.

    Supported kinds and parameters (all lengths in scene units, scenes fit
    the unit cube centered at the origin):
      cube:           side=0.8
      wedge:          width=0.8, depth=0.8, height=0.5
      l_bracket:      size=0.8, leg=0.3, height=0.4
      cylinder:       radius=0.3, height=0.6
      plate_over_box: box_size=0.45, plate_size=0.8, plate_thickness=0.05,
                      gap=0.15
    """
    def _check(value, lo=0.0, hi=1.0, name="parameter"):
        if not (lo < value <= hi):
            raise ValueError(f"{kind}: {name}={value} outside ({lo}, {hi}]")
        return float(value)

    if kind == "cube":
        side = _check(params.pop("side", 0.8), name="side")
        verts, faces = _box_mesh((0, 0, 0), (side, side, side))
        curves = _box_edge_curves((0, 0, 0), (side, side, side))
    elif kind == "wedge":
        w = _check(params.pop("width", 0.8), name="width")
        d = _check(params.pop("depth", 0.8), name="depth")
        h = _check(params.pop("height", 0.5), name="height")
        # right-triangle cross-section in xy, extruded along z
        poly = [(-w / 2, -d / 2), (-w / 2, d / 2), (w / 2, -d / 2)]
        tri = np.asarray(poly)
        bot = np.column_stack([tri[:, 0], np.full(3, -h / 2), tri[:, 1]])
        top = np.column_stack([tri[:, 0], np.full(3, h / 2), tri[:, 1]])
        verts = np.vstack([bot, top])
        faces = np.array(
            [(0, 2, 1), (3, 4, 5), (0, 1, 4), (0, 4, 3), (1, 2, 5), (1, 5, 4), (2, 0, 3), (2, 3, 5)],
            dtype=int,
        )
        curves = [geom.line_as_bezier(bot[i], bot[(i + 1) % 3]) for i in range(3)]
        curves += [geom.line_as_bezier(top[i], top[(i + 1) % 3]) for i in range(3)]
        curves += [geom.line_as_bezier(bot[i], top[i]) for i in range(3)]
    elif kind == "l_bracket":
        s = _check(params.pop("size", 0.8), name="size")
        leg = _check(params.pop("leg", 0.3), hi=s / 2, name="leg")
        h = _check(params.pop("height", 0.4), name="height")
        a = s / 2
        poly = [(-a, -a), (a, -a), (a, -a + leg), (-a + leg, -a + leg), (-a + leg, a), (-a, a)]
        curves, verts, faces = _prism_from_polygon(poly, -h / 2, h / 2)
    elif kind == "cylinder":
        r = _check(params.pop("radius", 0.3), hi=0.5, name="radius")
        h = _check(params.pop("height", 0.6), name="height")
        curves, verts, faces = _cylinder_mesh(r, h)
    elif kind == "plate_over_box":
        bs = _check(params.pop("box_size", 0.45), name="box_size")
        ps = _check(params.pop("plate_size", 0.8), name="plate_size")
        pt = _check(params.pop("plate_thickness", 0.05), name="plate_thickness")
        gap = _check(params.pop("gap", 0.15), name="gap")
        box_c = (0.0, -0.5 + 0.1 + bs / 2, 0.0)
        plate_c = (0.0, box_c[1] + bs / 2 + gap + pt / 2, 0.0)
        bv, bf = _box_mesh(box_c, (bs, bs, bs))
        pv, pf = _box_mesh(plate_c, (ps, pt, ps))
        verts = np.vstack([bv, pv])
        faces = np.vstack([bf, pf + len(bv)])
        curves = _box_edge_curves(box_c, (bs, bs, bs)) + _box_edge_curves(plate_c, (ps, pt, ps))
    else:
        raise ValueError(f"unknown scene kind {kind!r}; expected one of {SCENE_KINDS}")
    if params:
        raise ValueError(f"{kind}: unexpected parameters {sorted(params)}")
    scene = SceneSpec(kind, curves, verts, np.asarray(faces, dtype=int))
    if np.abs(verts).max() > 0.5 + 1e-9:
        raise ValueError(f"{kind}: scene does not fit the unit cube")
    return scene


def ray_hits_before(origins, dirs, t_max, triangles, eps=EPS_OCC):
    """Vectorized Moller-Trumbore occlusion query.

    Args:
      origins: (3,) shared ray origin.
      dirs: (N, 3) unit directions.
      t_max: (N,) ray length to each sample.
      triangles: (M, 3, 3) occluder triangles.

    Returns boolean (N,): True where some triangle is hit strictly before
    t_max - eps (the sample is occluded).
    """
    dirs = np.asarray(dirs, dtype=float)
    n = len(dirs)
    if len(triangles) == 0 or n == 0:
        return np.zeros(n, dtype=bool)
    v0 = triangles[:, 0]
    e1 = triangles[:, 1] - v0
    e2 = triangles[:, 2] - v0
    occluded = np.zeros(n, dtype=bool)
    # chunk over samples to bound the (chunk, M) temporaries
    chunk = max(1, int(4e6) // max(1, len(triangles)))
    for s in range(0, n, chunk):
        d = dirs[s : s + chunk]  # (c, 3)
        tm = t_max[s : s + chunk]
        p = np.cross(d[:, None, :], e2[None, :, :])  # (c, M, 3)
        det = np.einsum("mk,cmk->cm", e1, p)
        near_parallel = np.abs(det) <= 1e-14
        inv = np.where(near_parallel, 0.0, 1.0 / np.where(near_parallel, 1.0, det))
        tvec = origins[None, :] - v0  # (M, 3)
        u = np.einsum("mk,cmk->cm", tvec, p) * inv
        q = np.cross(tvec[None, :, :], e1[None, :, :])  # (1, M, 3) -> broadcast
        v = np.einsum("cmk,ck->cm", np.broadcast_to(q, p.shape), d) * inv
        t = np.einsum("mk,cmk->cm", e2, np.broadcast_to(q, p.shape)) * inv
        valid = (
            (~near_parallel)
            & (u >= -1e-12)
            & (v >= -1e-12)
            & (u + v <= 1.0 + 1e-12)
            & (t > eps)
            & (t < tm[:, None] - eps)
        )
        occluded[s : s + chunk] = valid.any(axis=1)
    return occluded


def visible_curve_samples(curve, camera, triangles, ts):
    """Evaluate curve at ts and flag each sample visible/occluded from camera."""
    pts = geom.bezier_point(np.asarray(curve, dtype=float), ts)
    rel = pts - camera.center
    dist = np.linalg.norm(rel, axis=1)
    dirs = rel / dist[:, None]
    occ = ray_hits_before(camera.center, dirs, dist, triangles)
    return pts, ~occ


def _adaptive_ts(curve, camera, max_gap_px=0.45, max_samples=16384):
    """Curve parameters whose consecutive projections are < max_gap_px apart."""
    ts = np.linspace(0.0, 1.0, 33)
    for _ in range(16):
        px, py, _ = geom.project(camera, geom.bezier_point(curve, ts))
        gaps = np.hypot(np.diff(px), np.diff(py))
        wide = np.nonzero(gaps >= max_gap_px)[0]
        if len(wide) == 0 or len(ts) >= max_samples:
            break
        mids = 0.5 * (ts[wide] + ts[wide + 1])
        ts = np.sort(np.concatenate([ts, mids]))
    return ts


def _splat_disks(img, px, py, radius):
    """Max-composite anti-aliased disks (intensity 1, linear falloff over the
    outer 0.5 px) centered at continuous coordinates (px, py)."""
    h, w = img.shape
    for x, y in zip(px, py):
        x0 = max(int(np.floor(x - radius - 0.5)), 0)
        x1 = min(int(np.ceil(x + radius + 0.5)), w - 1)
        y0 = max(int(np.floor(y - radius - 0.5)), 0)
        y1 = min(int(np.ceil(y + radius + 0.5)), h - 1)
        if x1 < x0 or y1 < y0:
            continue
        xs = np.arange(x0, x1 + 1) + 0.5
        ys = np.arange(y0, y1 + 1) + 0.5
        d = np.hypot(xs[None, :] - x, ys[:, None] - y)
        val = np.clip((radius - d) / 0.5, 0.0, 1.0)
        np.maximum(img[y0 : y1 + 1, x0 : x1 + 1], val, out=img[y0 : y1 + 1, x0 : x1 + 1])


def render_edge_map(scene, camera, stroke_px=1.5):
    """Render the hidden-line edge map of a scene from one camera.

    Each curve is sampled so consecutive projected samples are < 0.5 px
    apart; samples whose line of sight is blocked by the occluder mesh are
    dropped; the rest are splatted as soft disks of radius stroke_px.
    Deterministic in all inputs.
    """
    if stroke_px < 0.5:
        raise ValueError("stroke_px must be >= 0.5")
    img = np.zeros((camera.height, camera.width))
    tris = scene.triangles
    margin = stroke_px + 1.0
    for curve in scene.curves:
        ts = _adaptive_ts(curve, camera)
        pts, vis = visible_curve_samples(curve, camera, tris, ts)
        if not vis.any():
            continue
        px, py, z = geom.project(camera, pts[vis])
        keep = (z > 1e-6) & (px > -margin) & (px < camera.width + margin)
        keep &= (py > -margin) & (py < camera.height + margin)
        _splat_disks(img, px[keep], py[keep], stroke_px)
    return np.clip(img, 0.0, 1.0)


def degrade_edge_map(edge_map, dropout=0.0, blur_kernel=0, rng=None):
    """Blur (Gaussian, sigma = kernel/6) then randomly zero pixels."""
    if not (0 <= dropout < 1):
        raise ValueError("dropout must lie in [0, 1)")
    if blur_kernel and blur_kernel % 2 == 0:
        raise ValueError("blur_kernel must be odd or 0")
    out = np.asarray(edge_map, dtype=float).copy()
    if blur_kernel:
        sigma = blur_kernel / 6.0
        x = np.arange(blur_kernel) - blur_kernel // 2
        kern = np.exp(-0.5 * (x / sigma) ** 2)
        kern /= kern.sum()
        out = convolve1d(out, kern, axis=0, mode="constant", cval=0.0)
        out = convolve1d(out, kern, axis=1, mode="constant", cval=0.0)
    if dropout > 0:
        if rng is None:
            raise ValueError("dropout requires an rng")
        out[rng.random(out.shape) < dropout] = 0.0
    return np.clip(out, 0.0, 1.0)


def make_view_dataset(scene, n_views, intrinsics, radius=2.0, stroke_px=1.5,
                      dropout=0.0, blur_kernel=0, rng=None, workers=1):
    """Render a scene from n_views cameras on a Fibonacci sphere."""
    positions = geom.fibonacci_sphere(n_views, radius=radius)
    t_near, t_far = radius - 1.0, radius + 1.0
    cams = [
        geom.camera_look_at(p, (0, 0, 0), (0, 1, 0), intrinsics, t_near, t_far)
        for p in positions
    ]
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            maps = list(pool.map(lambda c: render_edge_map(scene, c, stroke_px), cams))
    else:
        maps = [render_edge_map(scene, c, stroke_px) for c in cams]
    if dropout > 0 or blur_kernel:
        maps = [degrade_edge_map(m, dropout, blur_kernel, rng) for m in maps]
    return ViewDataset(scene.name, list(zip(cams, maps)), list(scene.curves))


# ---------------------------------------------------------------------------
# dataset directory IO
#
# Layout: scene.json manifest (name + ground-truth curves, 12 reals each),
# view_%03d.pgm binary edge maps, view_%03d.cam text cameras.

def write_pgm(path, values):
    """8-bit binary PGM from float values in [0, 1]."""
    q = np.clip(np.rint(np.asarray(values) * 255.0), 0, 255).astype(np.uint8)
    h, w = q.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(q.tobytes())


def read_pgm(path):
    with open(path, "rb") as f:
        data = f.read()
    try:
        if not data.startswith(b"P5"):
            raise ValueError("not a binary PGM (P5)")
        # header: magic, width, height, maxval, then a single whitespace byte
        # before the raster (whose bytes may themselves look like whitespace)
        pos = 2
        tokens = []
        while len(tokens) < 3:
            while data[pos : pos + 1].isspace():
                pos += 1
            start = pos
            while not data[pos : pos + 1].isspace():
                pos += 1
            tokens.append(int(data[start:pos]))
        pos += 1  # exactly one separator byte
        w, h, maxval = tokens
        raster = data[pos : pos + w * h]
        if maxval != 255 or len(raster) != w * h:
            raise ValueError("unsupported or truncated PGM")
    except (ValueError, IndexError) as exc:
        raise ValueError(f"{path}: malformed PGM file ({exc})") from exc
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w) / 255.0


def _write_camera(path, cam):
    vals = [cam.fx, cam.fy, cam.cx, cam.cy]
    vals += [v for row in cam.rotation for v in row]
    vals += list(cam.translation) + [cam.t_near, cam.t_far]
    with open(path, "w") as f:
        f.write(f"{cam.width} {cam.height} ")
        f.write(" ".join(repr(float(v)) for v in vals))
        f.write("\n")


def _read_camera(path):
    with open(path) as f:
        tokens = f.read().split()
    if len(tokens) != 20:
        raise ValueError(f"{path}: expected 20 camera values, found {len(tokens)}")
    try:
        w, h = int(tokens[0]), int(tokens[1])
        vals = [float(t) for t in tokens[2:]]
    except ValueError as exc:
        raise ValueError(f"{path}: malformed camera file ({exc})") from exc
    cam = geom.Camera(
        w, h, vals[0], vals[1], vals[2], vals[3],
        np.array(vals[4:13]).reshape(3, 3), np.array(vals[13:16]),
        vals[16], vals[17],
    )
    try:
        cam.validate()
    except ValueError as exc:
        raise ValueError(f"{path}: invalid camera ({exc})") from exc
    return cam


def write_dataset(ds, directory):
    """Persist a ViewDataset; edge maps are quantized to 8 bits."""
    if len(ds.views) == 0:
        raise ValueError("refusing to write a dataset with no views")
    os.makedirs(directory, exist_ok=True)
    manifest = {
        "name": ds.scene_name,
        "n_views": len(ds.views),
        "curves": [np.asarray(c, dtype=float).reshape(12).tolist() for c in ds.gt_curves],
    }
    with open(os.path.join(directory, "scene.json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")
    for i, (cam, em) in enumerate(ds.views):
        write_pgm(os.path.join(directory, f"view_{i:03d}.pgm"), em)
        _write_camera(os.path.join(directory, f"view_{i:03d}.cam"), cam)


def read_dataset(directory):
    manifest_path = os.path.join(directory, "scene.json")
    if not os.path.exists(manifest_path):
        raise ValueError(f"{manifest_path}: missing dataset manifest")
    with open(manifest_path) as f:
        try:
            manifest = json.load(f)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{manifest_path}: malformed manifest ({exc})") from exc
    views = []
    for i in range(int(manifest["n_views"])):
        pgm = os.path.join(directory, f"view_{i:03d}.pgm")
        camf = os.path.join(directory, f"view_{i:03d}.cam")
        for p in (pgm, camf):
            if not os.path.exists(p):
                raise ValueError(f"{p}: missing dataset file")
        views.append((_read_camera(camf), read_pgm(pgm)))
    curves = [np.array(c, dtype=float).reshape(4, 3) for c in manifest["curves"]]
    return ViewDataset(manifest["name"], views, curves)
