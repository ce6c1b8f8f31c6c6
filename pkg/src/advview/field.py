"""Voxel-grid radiance fields: an analytic, queryable stand-in for a learned
volumetric scene representation.

A field maps a 3D position (and a viewing direction, accepted for interface
compatibility but ignored by the built-in grid) to an emitted RGB color in
``[0, 1]^3`` and a nonnegative volume density.  Values are stored at voxel
cell centers and interpolated trilinearly; positions outside the bounding
box are empty space (black, zero density).

Scene file format (version 1, all integers and floats little-endian):

======  =======================  ========================================
offset  size                     content
======  =======================  ========================================
0       8                        magic ``b"VOXSCENE"``
8       4                        format version, uint32 (= 1)
12      4                        class label, uint32
16      4                        name length ``n``, uint32
20      n                        scene name, UTF-8
20+n    12                       resolution nx, ny, nz, uint32 each
32+n    48                       bbox min xyz then max xyz, 6 x float64
80+n    4 * nx*ny*nz             densities, float32, x-fastest order
...     12 * nx*ny*nz            colors, RGB float32 per voxel, x-fastest
======  =======================  ========================================

"x-fastest" means the voxel at ``(ix, iy, iz)`` lands at flat index
``ix + nx * (iy + ny * iz)``.  Round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FieldValidationError, SceneParseError, SceneVersionError

SCENE_MAGIC = b"VOXSCENE"
SCENE_VERSION = 1

PRIMITIVE_KINDS = ("box", "sphere", "two_tone_cube", "asymmetric_marker")


class VoxelField:
    """Immutable discrete radiance field on a regular grid.

    ``colors`` has shape ``(nx, ny, nz, 3)`` with channels in ``[0, 1]``;
    ``densities`` has shape ``(nx, ny, nz)`` and is nonnegative.  Both are
    stored as float32 so serialization round-trips bit-exactly.
    """

    def __init__(self, colors, densities, bbox_min, bbox_max):
        colors = np.ascontiguousarray(colors, dtype=np.float32)
        densities = np.ascontiguousarray(densities, dtype=np.float32)
        if colors.ndim != 4 or colors.shape[-1] != 3:
            raise ValueError(f"colors must have shape (nx, ny, nz, 3), got {colors.shape}")
        if densities.shape != colors.shape[:3]:
            raise ValueError(
                f"densities shape {densities.shape} does not match colors {colors.shape[:3]}"
            )
        bad = np.argwhere(densities < 0)
        if bad.size:
            raise FieldValidationError("negative density", voxel=bad[0])
        bad = np.argwhere((colors < 0) | (colors > 1))
        if bad.size:
            raise FieldValidationError("color channel outside [0, 1]", voxel=bad[0][:3])
        self.colors = colors
        self.densities = densities
        self.bbox_min = np.asarray(bbox_min, dtype=float).reshape(3)
        self.bbox_max = np.asarray(bbox_max, dtype=float).reshape(3)
        if not np.all(self.bbox_max > self.bbox_min):
            raise ValueError("bbox must have positive extent on all axes")
        self._cell = (self.bbox_max - self.bbox_min) / np.array(densities.shape)
        # packed [density, r, g, b] rows so interpolation needs one gather
        # per trilinear corner
        self._packed = np.concatenate(
            [densities.astype(np.float64).reshape(-1, 1), colors.astype(np.float64).reshape(-1, 3)],
            axis=1,
        )

    @property
    def resolution(self) -> tuple[int, int, int]:
        return self.densities.shape

    def voxel_center(self, ix, iy, iz) -> np.ndarray:
        return self.bbox_min + (np.array([ix, iy, iz]) + 0.5) * self._cell

    def query_many(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Trilinear color and density at each row of ``points`` (M, 3).
        Points outside the bbox return black / zero density."""
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        colors = np.zeros((len(pts), 3))
        densities = np.zeros(len(pts))
        inside = np.flatnonzero(
            np.all((pts >= self.bbox_min) & (pts <= self.bbox_max), axis=1)
        )
        if inside.size == 0:
            return colors, densities
        # continuous voxel coordinate: integer values sit at cell centers
        g = (pts[inside] - self.bbox_min) / self._cell - 0.5
        i0 = np.floor(g)
        frac = g - i0
        i0 = i0.astype(np.int64)
        nx, ny, nz = self.densities.shape
        x0 = np.clip(i0[:, 0], 0, nx - 1)
        y0 = np.clip(i0[:, 1], 0, ny - 1)
        z0 = np.clip(i0[:, 2], 0, nz - 1)
        x1 = np.clip(i0[:, 0] + 1, 0, nx - 1)
        y1 = np.clip(i0[:, 1] + 1, 0, ny - 1)
        z1 = np.clip(i0[:, 2] + 1, 0, nz - 1)
        fx, fy, fz = frac[:, 0], frac[:, 1], frac[:, 2]
        acc = np.zeros((inside.size, 4))
        stride_x = ny * nz
        for ix, wx in ((x0, 1.0 - fx), (x1, fx)):
            base_x = ix * stride_x
            for iy, wy in ((y0, 1.0 - fy), (y1, fy)):
                wxy = wx * wy
                base_xy = base_x + iy * nz
                for iz, wz in ((z0, 1.0 - fz), (z1, fz)):
                    acc += (wxy * wz)[:, None] * self._packed[base_xy + iz]
        densities[inside] = acc[:, 0]
        colors[inside] = acc[:, 1:]
        return colors, densities

    def query(self, x, d=None) -> tuple[np.ndarray, float]:
        """Single-point field lookup ``(x, d) -> (color, density)``.  The
        viewing direction ``d`` is accepted so view-dependent fields can sit
        behind the same interface; the grid itself is view-independent."""
        colors, densities = self.query_many(np.asarray(x, dtype=float).reshape(1, 3))
        return colors[0], float(densities[0])


@dataclass(frozen=True)
class SceneSpec:
    """A field bound to its ground-truth class label and a name."""

    field: VoxelField
    label: int
    name: str

    def __post_init__(self):
        if self.label < 0:
            raise ValueError("label must be a nonnegative class index")


def _voxel_centers(resolution, bbox_min, bbox_max):
    nx, ny, nz = resolution
    bbox_min = np.asarray(bbox_min, dtype=float)
    bbox_max = np.asarray(bbox_max, dtype=float)
    cell = (bbox_max - bbox_min) / np.array([nx, ny, nz])
    xs = bbox_min[0] + (np.arange(nx) + 0.5) * cell[0]
    ys = bbox_min[1] + (np.arange(ny) + 0.5) * cell[1]
    zs = bbox_min[2] + (np.arange(nz) + 0.5) * cell[2]
    return np.meshgrid(xs, ys, zs, indexing="ij")


def build_primitive_scene(kind: str, resolution=(48, 48, 48), params: dict | None = None) -> VoxelField:
    """Deterministic procedural field of the given kind.

    Supported kinds: ``box``, ``sphere``, ``two_tone_cube`` and
    ``asymmetric_marker`` (an opaque cube with a painted face plus a narrow
    recessed channel, so some features are visible only from a wedge of
    directions).
    """
    if kind not in PRIMITIVE_KINDS:
        raise ValueError(f"unknown primitive kind {kind!r}; expected one of {PRIMITIVE_KINDS}")
    resolution = tuple(int(r) for r in resolution)
    if len(resolution) != 3 or min(resolution) < 2:
        raise ValueError(f"resolution must be >= 2 per axis, got {resolution}")
    params = dict(params or {})
    bbox_min = np.asarray(params.pop("bbox_min", (-1.0, -1.0, -1.0)), dtype=float)
    bbox_max = np.asarray(params.pop("bbox_max", (1.0, 1.0, 1.0)), dtype=float)
    density = float(params.pop("density", 30.0))

    x, y, z = _voxel_centers(resolution, bbox_min, bbox_max)
    colors = np.zeros(resolution + (3,), dtype=np.float32)
    densities = np.zeros(resolution, dtype=np.float32)

    if kind == "box":
        half = np.asarray(params.pop("half_extents", (0.6, 0.6, 0.6)), dtype=float)
        color = np.asarray(params.pop("color", (0.75, 0.75, 0.75)), dtype=float)
        mask = (np.abs(x) <= half[0]) & (np.abs(y) <= half[1]) & (np.abs(z) <= half[2])
        densities[mask] = density
        colors[mask] = color
    elif kind == "sphere":
        radius = float(params.pop("radius", 0.6))
        center = np.asarray(params.pop("center", (0.0, 0.0, 0.0)), dtype=float)
        color = np.asarray(params.pop("color", (0.8, 0.55, 0.15)), dtype=float)
        dist2 = (x - center[0]) ** 2 + (y - center[1]) ** 2 + (z - center[2]) ** 2
        mask = dist2 < radius**2
        densities[mask] = density
        colors[mask] = color
    elif kind == "two_tone_cube":
        half = float(params.pop("half_extent", 0.6))
        front = np.asarray(params.pop("front_color", (0.85, 0.15, 0.15)), dtype=float)
        back = np.asarray(params.pop("back_color", (0.15, 0.25, 0.85)), dtype=float)
        mask = (np.abs(x) <= half) & (np.abs(y) <= half) & (np.abs(z) <= half)
        densities[mask] = density
        colors[mask & (y >= 0)] = front
        colors[mask & (y < 0)] = back
    elif kind == "asymmetric_marker":
        half = float(params.pop("half_extent", 0.55))
        body = np.asarray(params.pop("body_color", (0.62, 0.62, 0.62)), dtype=float)
        face = np.asarray(params.pop("face_color", (0.9, 0.12, 0.12)), dtype=float)
        wall = np.asarray(params.pop("channel_color", (0.1, 0.9, 0.2)), dtype=float)
        face_depth = float(params.pop("face_depth", 0.1))
        face_half = float(params.pop("face_half", half))
        ch_radius = float(params.pop("channel_radius", 0.12))
        ch_depth = float(params.pop("channel_depth", 0.7))
        density = float(max(density, 60.0))
        cube = (np.abs(x) <= half) & (np.abs(y) <= half) & (np.abs(z) <= half)
        densities[cube] = density
        colors[cube] = body
        # painted patch on the +x face: visible only from the +x half-space
        patch = cube & (x >= half - face_depth) & (np.abs(y) <= face_half) & (np.abs(z) <= face_half)
        colors[patch] = face
        # channel bored inward from the -x face; its bright end wall is
        # visible only when the view axis lines up with the bore
        bore = cube & (np.sqrt(y**2 + z**2) <= ch_radius)
        channel = bore & (x <= -half + ch_depth)
        densities[channel] = 0.0
        colors[channel] = 0.0
        end_wall = bore & (x > -half + ch_depth) & (x <= -half + ch_depth + 2.5 * face_depth)
        colors[end_wall] = wall
    if params:
        raise ValueError(f"unknown parameters for kind {kind!r}: {sorted(params)}")
    return VoxelField(colors, densities, bbox_min, bbox_max)


def _x_fastest(arr: np.ndarray) -> np.ndarray:
    """Flatten (nx, ny, nz[, c]) so the x index varies fastest, keeping any
    trailing channel axis contiguous per voxel."""
    if arr.ndim == 4:
        return np.ascontiguousarray(arr.transpose(2, 1, 0, 3)).ravel()
    return np.ascontiguousarray(arr.transpose(2, 1, 0)).ravel()


def _from_x_fastest(flat: np.ndarray, resolution, channels=None) -> np.ndarray:
    nx, ny, nz = resolution
    if channels:
        return flat.reshape(nz, ny, nx, channels).transpose(2, 1, 0, 3)
    return flat.reshape(nz, ny, nx).transpose(2, 1, 0)


def save_scene(spec: SceneSpec, path) -> None:
    """Write a scene container; ``load_scene`` restores it bit-exactly."""
    name_bytes = spec.name.encode("utf-8")
    field = spec.field
    nx, ny, nz = field.resolution
    header = SCENE_MAGIC
    header += struct.pack("<III", SCENE_VERSION, spec.label, len(name_bytes))
    header += name_bytes
    header += struct.pack("<III", nx, ny, nz)
    header += struct.pack("<6d", *field.bbox_min, *field.bbox_max)
    dens = _x_fastest(field.densities).astype("<f4")
    cols = _x_fastest(field.colors).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(dens.tobytes())
        fh.write(cols.tobytes())


class _Cursor:
    """Byte reader that reports the failure offset on truncation."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise SceneParseError(
                f"truncated scene file: wanted {n} bytes, had {len(self.data) - self.pos}",
                offset=self.pos,
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_scene(path) -> SceneSpec:
    """Parse a scene container written by :func:`save_scene`.

    Raises :class:`SceneParseError` (with byte offset) on malformed input,
    :class:`SceneVersionError` on a version mismatch, and
    :class:`FieldValidationError` when stored values violate field
    invariants; no partial scene is ever returned.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    cur = _Cursor(data)
    magic = cur.take(len(SCENE_MAGIC))
    if magic != SCENE_MAGIC:
        raise SceneParseError(f"bad magic {magic!r}", offset=0)
    (version,) = cur.unpack("<I")
    if version != SCENE_VERSION:
        raise SceneVersionError(version, SCENE_VERSION)
    label, name_len = cur.unpack("<II")
    try:
        name = cur.take(name_len).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise SceneParseError(f"scene name is not valid UTF-8: {exc}", offset=cur.pos) from exc
    nx, ny, nz = cur.unpack("<III")
    if min(nx, ny, nz) < 1 or nx * ny * nz > 2**30:
        raise SceneParseError(f"implausible resolution {(nx, ny, nz)}", offset=cur.pos - 12)
    bbox = cur.unpack("<6d")
    count = nx * ny * nz
    dens_off = cur.pos
    dens = np.frombuffer(cur.take(4 * count), dtype="<f4")
    cols = np.frombuffer(cur.take(12 * count), dtype="<f4")
    if cur.pos != len(data):
        raise SceneParseError(
            f"{len(data) - cur.pos} trailing bytes after scene payload", offset=cur.pos
        )
    densities = _from_x_fastest(dens, (nx, ny, nz))
    colors = _from_x_fastest(cols, (nx, ny, nz), channels=3)
    bad = np.argwhere(densities < 0)
    if bad.size:
        # report before VoxelField so the message can cite the file
        raise FieldValidationError(
            f"scene file {path} stores a negative density (densities start at byte {dens_off})",
            voxel=bad[0],
        )
    field = VoxelField(colors, densities, bbox[:3], bbox[3:])
    return SceneSpec(field=field, label=label, name=name)
