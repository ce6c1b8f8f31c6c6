"""Camera geometry: viewpoint parameter vectors, poses, and per-pixel rays.

Conventions (fixed for the whole package):

* World frame is right-handed with +z up.  The camera starts at an initial
  center (default ``[0, 4, 0]``) looking at the scene origin.
* A viewpoint ``v = [psi, theta, phi, dx, dy, dz]`` first rotates the whole
  camera (orientation and center) about the scene origin by the intrinsic
  z-y'-x Tait-Bryan angles (yaw ``psi``, pitch ``theta``, roll ``phi``,
  in degrees, matrix form ``Rz(psi) @ Ry(theta) @ Rx(phi)``), then offsets
  the camera center by ``(dx, dy, dz)`` expressed in world axes.
* Camera frame follows the computer-vision convention: x right, y down,
  z forward, so the camera-to-world rotation has determinant +1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BoundsError

WORLD_UP = np.array([0.0, 0.0, 1.0])
DEFAULT_INIT_CENTER = np.array([0.0, 4.0, 0.0])


@dataclass(frozen=True)
class Viewpoint:
    """Six camera transformation parameters: three Tait-Bryan angles in
    degrees (yaw, pitch, roll) and a world-frame translation offset."""

    psi: float
    theta: float
    phi: float
    dx: float
    dy: float
    dz: float

    def as_array(self) -> np.ndarray:
        return np.array([self.psi, self.theta, self.phi, self.dx, self.dy, self.dz])

    @classmethod
    def from_array(cls, values, bounds: "ViewpointBounds | None" = None) -> "Viewpoint":
        """Build a viewpoint from a 6-vector, validating against ``bounds``
        when given."""
        arr = np.asarray(values, dtype=float).reshape(6)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"viewpoint components must be finite, got {arr}")
        if bounds is not None:
            bounds.validate(arr)
        return cls(*arr.tolist())


class ViewpointBounds:
    """Componentwise box ``[v_min, v_max]`` for viewpoint parameters.

    Stores the half-width ``a = (v_max - v_min) / 2`` and midpoint
    ``b = (v_max + v_min) / 2`` used by the bounded tanh transform; the
    reported ``v_min``/``v_max`` are re-derived as ``b -/+ a`` so that the
    identities ``b + a == v_max`` and ``b - a == v_min`` hold exactly in
    floating point.
    """

    def __init__(self, v_min, v_max):
        v_min = np.asarray(v_min, dtype=float).reshape(6)
        v_max = np.asarray(v_max, dtype=float).reshape(6)
        if not (np.all(np.isfinite(v_min)) and np.all(np.isfinite(v_max))):
            raise ValueError("bounds must be finite")
        if not np.all(v_min < v_max):
            raise ValueError(
                f"v_min must be strictly below v_max componentwise: {v_min} vs {v_max}"
            )
        self.a = (v_max - v_min) / 2.0
        self.b = (v_max + v_min) / 2.0
        self.v_min = self.b - self.a
        self.v_max = self.b + self.a

    def __repr__(self):
        return f"ViewpointBounds(v_min={self.v_min.tolist()}, v_max={self.v_max.tolist()})"

    def contains(self, values) -> bool:
        arr = np.asarray(values, dtype=float).reshape(-1, 6)
        return bool(np.all(arr >= self.v_min) and np.all(arr <= self.v_max))

    def validate(self, values):
        arr = np.asarray(values, dtype=float).reshape(6)
        bad = np.flatnonzero((arr < self.v_min) | (arr > self.v_max))
        if bad.size:
            d = int(bad[0])
            raise BoundsError(
                f"viewpoint component {d} = {arr[d]} outside "
                f"[{self.v_min[d]}, {self.v_max[d]}]"
            )

    def clip(self, values) -> np.ndarray:
        return np.clip(np.asarray(values, dtype=float), self.v_min, self.v_max)

    @property
    def widths(self) -> np.ndarray:
        return self.v_max - self.v_min


@dataclass(frozen=True)
class CameraPose:
    """Camera-to-world rotation (columns: right, down, forward) plus the
    camera center in world coordinates."""

    rotation: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=float)
        ctr = np.asarray(self.center, dtype=float).reshape(3)
        err = np.abs(rot.T @ rot - np.eye(3)).max()
        if err > 1e-9:
            raise ValueError(f"rotation is not orthonormal (max |R'R - I| = {err:.3g})")
        if abs(np.linalg.det(rot) - 1.0) > 1e-9:
            raise ValueError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "center", ctr)

    @property
    def forward(self) -> np.ndarray:
        return self.rotation[:, 2]


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=float).reshape(3)
        d = np.asarray(self.direction, dtype=float).reshape(3)
        if abs(np.linalg.norm(d) - 1.0) > 1e-12:
            raise ValueError("ray direction must be unit-norm")
        if not (0.0 <= self.t_near < self.t_far):
            raise ValueError(f"need 0 <= t_near < t_far, got [{self.t_near}, {self.t_far}]")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    def point(self, t) -> np.ndarray:
        return self.origin + np.multiply.outer(np.asarray(t), self.direction)


def rotation_matrix(psi: float, theta: float, phi: float) -> np.ndarray:
    """Composed intrinsic z-y'-x rotation ``Rz(psi) @ Ry(theta) @ Rx(phi)``
    for angles in degrees (yaw, pitch, roll)."""
    angles = np.array([psi, theta, phi], dtype=float)
    if not np.all(np.isfinite(angles)):
        raise ValueError(f"angles must be finite, got {angles}")
    cz, sz = np.cos(np.radians(psi)), np.sin(np.radians(psi))
    cy, sy = np.cos(np.radians(theta)), np.sin(np.radians(theta))
    cx, sx = np.cos(np.radians(phi)), np.sin(np.radians(phi))
    rz = np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]])
    return rz @ ry @ rx


def look_at_rotation(center, target=(0.0, 0.0, 0.0), up=WORLD_UP) -> np.ndarray:
    """Camera-to-world rotation for a camera at ``center`` looking at
    ``target`` (columns: right, down, forward)."""
    center = np.asarray(center, dtype=float)
    target = np.asarray(target, dtype=float)
    forward = target - center
    norm = np.linalg.norm(forward)
    if norm == 0.0:
        raise ValueError("camera center coincides with the look-at target")
    forward = forward / norm
    up = np.asarray(up, dtype=float)
    if np.linalg.norm(np.cross(forward, up)) < 1e-12:
        up = np.array([0.0, 1.0, 0.0])  # view axis parallel to world up
    right = np.cross(forward, up)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    return np.column_stack([right, down, forward])


def viewpoint_to_pose(
    v: Viewpoint,
    init_center=DEFAULT_INIT_CENTER,
    bounds: ViewpointBounds | None = None,
) -> CameraPose:
    """Rotate the initial camera (orientation and center) about the scene
    origin by the viewpoint's Tait-Bryan angles, then translate the center
    by ``(dx, dy, dz)`` in world axes."""
    if bounds is not None:
        bounds.validate(v.as_array())
    init_center = np.asarray(init_center, dtype=float).reshape(3)
    rot = rotation_matrix(v.psi, v.theta, v.phi)
    base = look_at_rotation(init_center)
    center = rot @ init_center + np.array([v.dx, v.dy, v.dz])
    return CameraPose(rotation=rot @ base, center=center)


def ray_directions(pose: CameraPose, width: int, height: int, fov_deg: float) -> np.ndarray:
    """World-space unit directions through all pixel centers, row-major,
    shape ``(height * width, 3)``.  ``fov_deg`` is the full vertical field
    of view; the horizontal extent scales with the aspect ratio."""
    if width < 1 or height < 1:
        raise ValueError("image dimensions must be >= 1")
    if not (0.0 < fov_deg < 180.0):
        raise ValueError(f"fov must lie in (0, 180) degrees, got {fov_deg}")
    half_h = np.tan(np.radians(fov_deg) / 2.0)
    half_w = half_h * (width / height)
    # pixel centers in normalized device coords; +y is down in camera frame
    xs = ((np.arange(width) + 0.5) / width * 2.0 - 1.0) * half_w
    ys = ((np.arange(height) + 0.5) / height * 2.0 - 1.0) * half_h
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    dirs_cam = np.stack(
        [grid_x.ravel(), grid_y.ravel(), np.ones(width * height)], axis=1
    )
    dirs_cam /= np.linalg.norm(dirs_cam, axis=1, keepdims=True)
    return dirs_cam @ pose.rotation.T


def generate_rays(
    pose: CameraPose,
    width: int,
    height: int,
    fov_deg: float,
    t_near: float,
    t_far: float,
) -> list[Ray]:
    """One ray per pixel center, row-major (index = row * width + col).
    All origins equal the camera center."""
    dirs = ray_directions(pose, width, height, fov_deg)
    return [Ray(pose.center, d, t_near, t_far) for d in dirs]
