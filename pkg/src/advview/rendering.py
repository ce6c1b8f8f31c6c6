"""Volume rendering over a voxel radiance field.

Each pixel's color is the transmittance-weighted quadrature along its ray:
``C = sum_i T(t_i) * alpha(tau(t_i) * delta_i) * c(t_i)`` with
``T(t_i) = exp(-sum_{j<i} tau(t_j) * delta_j)`` and
``alpha(x) = 1 - exp(-x)``.  ``delta_i = t_{i+1} - t_i`` for interior
samples; the last interval closes against ``t_far``.  Residual
transmittance ``1 - sum_i w_i`` is composited onto a configurable
background color.

Determinism: stratified jitter is a pure function of
``(rng_seed, pixel index, sample index)`` via a splitmix64 hash, so a
render is bit-identical no matter how pixels are scheduled or chunked.
"""

from __future__ import annotations

import zlib
import struct
from dataclasses import dataclass

import numpy as np

from .field import VoxelField
from .geometry import (
    DEFAULT_INIT_CENTER,
    Ray,
    Viewpoint,
    ViewpointBounds,
    ray_directions,
    viewpoint_to_pose,
)

WHITE = (1.0, 1.0, 1.0)


@dataclass(frozen=True)
class RenderConfig:
    samples_per_ray: int = 32
    stratified: bool = True
    background: tuple[float, float, float] = WHITE
    width: int = 64
    height: int = 64
    fov_deg: float = 60.0
    t_near: float = 2.0
    t_far: float = 6.0
    rng_seed: int = 0
    init_center: tuple[float, float, float] = tuple(DEFAULT_INIT_CENTER)

    def __post_init__(self):
        if self.samples_per_ray < 2:
            raise ValueError("samples_per_ray must be >= 2")
        bg = np.asarray(self.background, dtype=float)
        if bg.shape != (3,) or np.any(bg < 0) or np.any(bg > 1):
            raise ValueError(f"background must be an RGB triple in [0,1], got {self.background}")
        if not (0 <= self.t_near < self.t_far):
            raise ValueError("need 0 <= t_near < t_far")


class ImageBuffer:
    """Row-major RGB image with channels in [0, 1], stored (height, width, 3)."""

    def __init__(self, pixels):
        pixels = np.asarray(pixels, dtype=float)
        if pixels.ndim != 3 or pixels.shape[-1] != 3:
            raise ValueError(f"pixels must have shape (h, w, 3), got {pixels.shape}")
        if np.any(pixels < 0) or np.any(pixels > 1):
            raise ValueError("pixel channels must lie in [0, 1]")
        self.pixels = pixels

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def quantized(self) -> np.ndarray:
        """8-bit channels via round-half-to-even on value * 255."""
        return np.rint(self.pixels * 255.0).astype(np.uint8)

    def to_ppm_bytes(self) -> bytes:
        header = f"P6\n{self.width} {self.height}\n255\n".encode("ascii")
        return header + self.quantized().tobytes()

    def to_png_bytes(self) -> bytes:
        return png_bytes(self.quantized())

    def save(self, path) -> None:
        path = str(path)
        if path.endswith(".ppm"):
            data = self.to_ppm_bytes()
        elif path.endswith(".png"):
            data = self.to_png_bytes()
        else:
            raise ValueError(f"unsupported image extension on {path!r} (use .ppm or .png)")
        with open(path, "wb") as fh:
            fh.write(data)


def png_bytes(rgb8: np.ndarray) -> bytes:
    """Minimal lossless PNG encoder (8-bit RGB, filter 0); byte-deterministic."""
    rgb8 = np.ascontiguousarray(rgb8, dtype=np.uint8)
    h, w, _ = rgb8.shape

    def chunk(tag: bytes, payload: bytes) -> bytes:
        crc = zlib.crc32(tag + payload) & 0xFFFFFFFF
        return struct.pack(">I", len(payload)) + tag + payload + struct.pack(">I", crc)

    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    raw = b"".join(b"\x00" + rgb8[row].tobytes() for row in range(h))
    return (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", ihdr)
        + chunk(b"IDAT", zlib.compress(raw, 9))
        + chunk(b"IEND", b"")
    )


def _splitmix64(x: np.ndarray) -> np.ndarray:
    # uint64 arithmetic wraps modulo 2**64 by design
    with np.errstate(over="ignore"):
        z = x + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


_MASK64 = (1 << 64) - 1


def _mix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(*parts: int) -> int:
    """Fold integers into one 64-bit stream seed (order-sensitive); used to
    give each render in a larger computation its own deterministic seed."""
    h = 0x243F6A8885A308D3
    for p in parts:
        h = _mix64(h ^ (int(p) & _MASK64))
    return h


def stratified_offsets(seed: int, pixel_indices: np.ndarray, n_samples: int) -> np.ndarray:
    """Uniform [0, 1) jitter per (pixel, sample), a pure hash of
    (seed, pixel index, sample index); order- and chunk-independent."""
    mixed = np.uint64(_mix64(seed & _MASK64))
    pix = np.asarray(pixel_indices, dtype=np.uint64).reshape(-1, 1)
    samp = np.arange(n_samples, dtype=np.uint64).reshape(1, -1)
    h = _splitmix64(_splitmix64(mixed ^ pix) ^ samp)
    return (h >> np.uint64(11)).astype(np.float64) * (2.0**-53)


def sample_quadrature(ray: Ray, n: int, stratified: bool, rng: np.random.Generator | None = None) -> np.ndarray:
    """Quadrature points along a ray: one per equal-width bin of
    [t_near, t_far], jittered uniformly within its bin when ``stratified``
    (requires ``rng``), else at bin midpoints.  Strictly increasing."""
    if n < 2:
        raise ValueError("need at least 2 quadrature samples")
    edges = ray.t_near + (ray.t_far - ray.t_near) * np.arange(n + 1) / n
    widths = np.diff(edges)
    if stratified:
        if rng is None:
            raise ValueError("stratified sampling requires an rng")
        u = rng.random(n)
    else:
        u = np.full(n, 0.5)
    return edges[:-1] + u * widths


def compositing_weights(densities: np.ndarray, deltas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample weights ``w_i = T(t_i) * alpha(tau_i * delta_i)`` and the
    transmittances ``T``; leading axes broadcast (rays), last axis samples."""
    tau_delta = densities * deltas
    accum = np.cumsum(tau_delta, axis=-1)
    # exclusive prefix: T(t_1) = exp(0) = 1
    prefix = np.concatenate([np.zeros_like(accum[..., :1]), accum[..., :-1]], axis=-1)
    transmittance = np.exp(-prefix)
    alpha = -np.expm1(-tau_delta)
    return transmittance * alpha, transmittance


def _deltas(t: np.ndarray, t_far: float) -> np.ndarray:
    last = t_far - t[..., -1:]
    return np.concatenate([np.diff(t, axis=-1), last], axis=-1)


def composite_ray(field: VoxelField, ray: Ray, t: np.ndarray, background=WHITE) -> np.ndarray:
    """Color of one ray given its quadrature points ``t`` (strictly
    increasing, within [t_near, t_far])."""
    t = np.asarray(t, dtype=float)
    if t.ndim != 1 or np.any(np.diff(t) <= 0):
        raise ValueError("quadrature points must be strictly increasing")
    colors, densities = field.query_many(ray.point(t))
    weights, _ = compositing_weights(densities, _deltas(t, ray.t_far))
    residual = 1.0 - weights.sum()
    return weights @ colors + residual * np.asarray(background, dtype=float)


def render(
    field: VoxelField,
    v: Viewpoint,
    cfg: RenderConfig,
    bounds: ViewpointBounds | None = None,
) -> ImageBuffer:
    """Render the field from viewpoint ``v``.  Bit-deterministic for a fixed
    ``cfg.rng_seed`` regardless of pixel evaluation order."""
    pose = viewpoint_to_pose(v, cfg.init_center, bounds=bounds)
    dirs = ray_directions(pose, cfg.width, cfg.height, cfg.fov_deg)
    n_pix = cfg.width * cfg.height
    n = cfg.samples_per_ray
    span = cfg.t_far - cfg.t_near
    edges = cfg.t_near + span * np.arange(n) / n
    bin_w = span / n
    if cfg.stratified:
        u = stratified_offsets(cfg.rng_seed, np.arange(n_pix), n)
    else:
        u = 0.5
    t = edges + u * bin_w  # (n_pix, n) or broadcast row
    t = np.broadcast_to(t, (n_pix, n))
    pts = pose.center + t[:, :, None] * dirs[:, None, :]
    colors, densities = field.query_many(pts.reshape(-1, 3))
    colors = colors.reshape(n_pix, n, 3)
    densities = densities.reshape(n_pix, n)
    weights, _ = compositing_weights(densities, _deltas(t, cfg.t_far))
    residual = 1.0 - weights.sum(axis=-1, keepdims=True)
    img = np.einsum("pn,pnc->pc", weights, colors) + residual * np.asarray(cfg.background)
    img = np.clip(img, 0.0, 1.0).reshape(cfg.height, cfg.width, 3)
    return ImageBuffer(img)
