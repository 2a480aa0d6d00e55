"""Core geometric primitives: cameras, rays, cubic Bezier curves, sphere sampling,
positional encoding.

Conventions used throughout the package:
  - 3D points and directions are numpy arrays of shape (3,) or (N, 3).
  - A cubic Bezier curve is a (4, 3) array of control points; row 0 and row 3
    are the endpoints.  A curve set is an (n, 4, 3) array.
  - Cameras follow the pinhole model with x right, y down, z forward
    (viewing direction).  Pixel (row i, col j) has its center at continuous
    coordinates (j + 0.5, i + 0.5).
  - The scene is normalized so objects fit inside the unit cube centered at
    the origin.
"""

from dataclasses import dataclass

import numpy as np

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


def normalize(v):
    """Return v scaled to unit length. Raises on (near-)zero vectors."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise ValueError("cannot normalize a zero-length vector")
    return v / n


def fibonacci_sphere(n, radius=1.0, center=(0.0, 0.0, 0.0)):
    """Place n points near-uniformly on a sphere using the golden-angle lattice.

    Uses the half-offset lattice y_i = 1 - (2i+1)/n, which avoids putting
    points exactly at the poles.  Deterministic: same inputs, same output.

    Returns an (n, 3) array.
    """
    if n < 1:
        raise ValueError("fibonacci_sphere requires n >= 1")
    if radius <= 0:
        raise ValueError("fibonacci_sphere requires radius > 0")
    i = np.arange(n, dtype=float)
    y = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - y * y))
    theta = GOLDEN_ANGLE * i
    pts = np.stack([np.cos(theta) * r, y, np.sin(theta) * r], axis=1)
    return np.asarray(center, dtype=float) + radius * pts


@dataclass
class Intrinsics:
    """Pinhole intrinsics in pixels."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float

    def validate(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


def intrinsics_from_fov(width, height, fov_deg=60.0):
    """Square-pixel intrinsics with the given horizontal field of view."""
    f = 0.5 * width / np.tan(np.radians(fov_deg) / 2)
    return Intrinsics(width, height, f, f, width / 2.0, height / 2.0)


@dataclass
class Camera:
    """Calibrated pinhole camera.

    rotation/translation give the world-from-camera rigid transform:
    x_world = rotation @ x_camera + translation, so `translation` is the
    camera center and the third column of `rotation` is the viewing
    direction.  t_near / t_far bound the sampled segment of every ray.
    """

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    t_near: float = 1.0
    t_far: float = 3.0

    def validate(self):
        Intrinsics(self.width, self.height, self.fx, self.fy, self.cx, self.cy).validate()
        R = self.rotation
        if R.shape != (3, 3) or not np.allclose(R @ R.T, np.eye(3), atol=1e-8):
            raise ValueError("camera rotation must be orthonormal")
        if np.linalg.det(R) < 0:
            raise ValueError("camera rotation must have determinant +1")
        if not (0 < self.t_near < self.t_far):
            raise ValueError("require 0 < t_near < t_far")

    @property
    def center(self):
        return self.translation

    @property
    def view_dir(self):
        return self.rotation[:, 2]


@dataclass
class Ray:
    """Ray origin + unit direction with near/far sampling bounds."""

    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float


def camera_look_at(position, target, up, intrinsics, t_near=1.0, t_far=3.0):
    """Build a camera at `position` whose viewing axis points at `target`.

    `up` fixes the roll; it must not be parallel to the viewing direction.
    """
    position = np.asarray(position, dtype=float)
    target = np.asarray(target, dtype=float)
    forward = target - position
    if np.linalg.norm(forward) < 1e-12:
        raise ValueError("camera position and target coincide")
    z = forward / np.linalg.norm(forward)
    side = np.cross(z, np.asarray(up, dtype=float))
    if np.linalg.norm(side) < 1e-9:
        raise ValueError("up vector is parallel to the viewing direction")
    x = side / np.linalg.norm(side)
    y = np.cross(z, x)
    R = np.stack([x, y, z], axis=1)
    intrinsics.validate()
    cam = Camera(
        intrinsics.width,
        intrinsics.height,
        intrinsics.fx,
        intrinsics.fy,
        intrinsics.cx,
        intrinsics.cy,
        R,
        position,
        t_near,
        t_far,
    )
    cam.validate()
    return cam


def pixel_ray(camera, px, py):
    """Ray from the camera center through continuous pixel coordinates (px, py)."""
    if not (0 <= px < camera.width and 0 <= py < camera.height):
        raise ValueError(f"pixel ({px}, {py}) outside image {camera.width}x{camera.height}")
    d_cam = np.array([(px - camera.cx) / camera.fx, (py - camera.cy) / camera.fy, 1.0])
    d = camera.rotation @ d_cam
    d /= np.linalg.norm(d)
    return Ray(camera.translation.copy(), d, camera.t_near, camera.t_far)


def project(camera, points):
    """Project world points into the image.

    Args:
      points: (3,) or (N, 3) world coordinates.

    Returns:
      (px, py, z): continuous pixel coordinates and camera-frame depth,
      each scalar or (N,).  Points behind the camera get z <= 0; no clipping
      is applied here.
    """
    p = np.atleast_2d(np.asarray(points, dtype=float))
    pc = (p - camera.translation) @ camera.rotation
    z = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        px = camera.fx * pc[:, 0] / z + camera.cx
        py = camera.fy * pc[:, 1] / z + camera.cy
    if np.asarray(points).ndim == 1:
        return px[0], py[0], z[0]
    return px, py, z


def positional_encoding(v, L, include_input=True, out=None):
    """Sinusoidal feature expansion of each input component.

    For every component x and every octave k in 0..L-1 the output contains
    sin(2^k * pi * x) and cos(2^k * pi * x); the raw input is prepended when
    include_input is set.  Output shape (..., d*2L [+ d]), written into
    `out` when given.
    """
    if L < 1:
        raise ValueError("positional_encoding requires L >= 1")
    v = np.asarray(v)
    if v.dtype.kind != "f":
        v = v.astype(float)
    d = v.shape[-1]
    off = d if include_input else 0
    if out is None:
        out = np.empty(v.shape[:-1] + (off + 2 * L * d,), dtype=v.dtype)
    if include_input:
        out[..., :d] = v
    freqs = (2.0 ** np.arange(L, dtype=v.dtype)) * np.pi
    # reshape views the sin/cos lanes of `out`; angles are staged in the sin
    # lane so no temporary of the full encoded size is allocated
    enc = out[..., off:].reshape(v.shape[:-1] + (L, 2, d))
    ang = enc[..., 0, :]
    np.multiply(v[..., None, :], freqs[:, None], out=ang)
    np.cos(ang, out=enc[..., 1, :])
    np.sin(ang, out=ang)
    return out


def bezier_basis_weights(t):
    """Degree-3 Bernstein weights at parameter t (scalar or array).

    Returns shape (4,) for scalar t, (N, 4) for array t; weights are
    nonnegative and sum to 1.
    """
    t = np.asarray(t, dtype=float)
    u = 1.0 - t
    w = np.stack([u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t], axis=-1)
    return w


def bezier_point(curve, t):
    """Evaluate a cubic Bezier at t in [0, 1] (scalar or array of ts)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > 1):
        raise ValueError("bezier parameter t must lie in [0, 1]")
    curve = np.asarray(curve, dtype=float)
    return bezier_basis_weights(t) @ curve


def bezier_length(curve, n=128):
    """Polyline approximation of the curve's arc length."""
    pts = bezier_point(curve, np.linspace(0.0, 1.0, n))
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def line_as_bezier(a, b):
    """Represent the segment a-b as a cubic Bezier with collinear controls."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.stack([a, a + (b - a) / 3.0, a + 2.0 * (b - a) / 3.0, b])


def stratified_samples(ray, n, rng):
    """One uniform draw per equal sub-interval of [t_near, t_far], increasing."""
    if n < 1:
        raise ValueError("need at least one sample")
    step = (ray.t_far - ray.t_near) / n
    return ray.t_near + (np.arange(n) + rng.random(n)) * step
