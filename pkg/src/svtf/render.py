"""Emission/absorption raymarcher over an SVT with a precomputed
illumination cache.

Lighting model: incident light at each point is precomputed per cache voxel
as sum over lights of intensity times Beer-Lambert transmittance along a
secondary march toward the light (isotropic scattering, so the cache is
camera independent). The marcher then composites, front to back with a
fixed step count across the ray's AABB span,

    radiance/length = emission_scale * lut_color * (1 + incident)

attenuated by extinction sigma = lut_opacity * density_scale. Sources are
sampled at step midpoints, which converges to the analytic transmittance
integral from below at second order in the step size.
"""

from __future__ import annotations

import concurrent.futures
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .sample import sample_trilinear_many, trilinear_dense
from .svt import SparseVolumeTexture
from .volume import VolumeDims, VoxelFormat

MIN_TRANSMITTANCE = 1e-3


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = float(np.linalg.norm(v))
    if n == 0:
        raise ValueError("zero-length direction")
    return v / n


@dataclass(frozen=True)
class DirectionalLight:
    """Parallel light; `direction` is the direction the light travels."""

    direction: tuple[float, float, float]
    intensity: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "direction", tuple(_unit(self.direction)))
        if min(self.intensity) < 0:
            raise ValueError("intensity components must be >= 0")


@dataclass(frozen=True)
class PointLight:
    """Point light with smooth radial falloff 1 / (1 + (d/radius)^2)."""

    position: tuple[float, float, float]
    radius: float = 1.0
    intensity: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be > 0")
        if min(self.intensity) < 0:
            raise ValueError("intensity components must be >= 0")


Light = DirectionalLight | PointLight


@dataclass
class TransferFunction:
    """256-entry RGBA lookup plus density/emission scales and a visibility window."""

    lut: np.ndarray  # (256, 4) floats in [0, 1]
    density_scale: float = 1.0
    emission_scale: float = 1.0
    window: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        self.lut = np.asarray(self.lut, dtype=np.float64)
        if self.lut.shape != (256, 4):
            raise ValueError("lut must have 256 RGBA entries")
        if self.lut[:, 3].min() < 0 or self.lut[:, 3].max() > 1:
            raise ValueError("lut opacity must lie in [0, 1]")
        if not self.window[0] < self.window[1]:
            raise ValueError("window must satisfy lo < hi")
        if self.density_scale < 0 or self.emission_scale < 0:
            raise ValueError("scales must be >= 0")

    @staticmethod
    def grayscale(density_scale=1.0, emission_scale=1.0, window=(0.0, 1.0)):
        ramp = np.linspace(0.0, 1.0, 256)
        lut = np.stack([ramp, ramp, ramp, ramp], axis=1)
        return TransferFunction(lut, density_scale, emission_scale, window)

    @staticmethod
    def constant(rgb=(1.0, 1.0, 1.0), opacity=1.0, density_scale=1.0, emission_scale=1.0):
        lut = np.tile(np.asarray([*rgb, opacity], dtype=np.float64), (256, 1))
        return TransferFunction(lut, density_scale, emission_scale)

    @staticmethod
    def from_lut_file(path, **kwargs) -> "TransferFunction":
        """Read 256 lines of 4 integers 0-255 (R G B A)."""
        rows = []
        for line in Path(path).read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"lut line needs 4 integers, got {line!r}")
            rows.append([int(p) for p in parts])
        if len(rows) != 256:
            raise ValueError(f"lut file must have 256 entries, got {len(rows)}")
        lut = np.asarray(rows, dtype=np.float64)
        if lut.min() < 0 or lut.max() > 255:
            raise ValueError("lut entries must be integers 0-255")
        return TransferFunction(lut / 255.0, **kwargs)

    def classify(self, scalars: np.ndarray, fmt: VoxelFormat):
        """Map raw samples to (sigma, rgb); outside the window both are zero."""
        u = scalars / 255.0 if fmt is VoxelFormat.U8 else scalars
        visible = (u >= self.window[0]) & (u <= self.window[1])
        idx = np.clip(np.rint(u * 255.0), 0, 255).astype(np.int64)
        entry = self.lut[idx]
        sigma = np.where(visible, entry[:, 3] * self.density_scale, 0.0)
        rgb = np.where(visible[:, None], entry[:, :3], 0.0)
        return sigma, rgb


@dataclass
class IlluminationCache:
    """Per-voxel incident RGB radiance on a grid downsampled from the volume."""

    dims: VolumeDims
    downsample_factor: int
    values: np.ndarray  # (z, y, x, 3)

    def sample_incident(self, px, py, pz) -> np.ndarray:
        f = float(self.downsample_factor)
        return trilinear_dense(self.values, px / f, py / f, pz / f)


@dataclass(frozen=True)
class Camera:
    eye: tuple[float, float, float]
    look_at: tuple[float, float, float]
    up: tuple[float, float, float] = (0.0, 1.0, 0.0)
    vfov_deg: float = 45.0
    width: int = 512
    height: int = 512
    ortho_height: float | None = None  # orthographic when set

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dims must be positive")

    def _basis(self):
        fwd = _unit(np.asarray(self.look_at, float) - np.asarray(self.eye, float))
        right = _unit(np.cross(fwd, _unit(self.up)))
        up = np.cross(right, fwd)
        return right, up, fwd

    def rays(self):
        """Per-pixel (origins, directions), each (H*W, 3), row-major pixels."""
        right, up, fwd = self._basis()
        w, h = self.width, self.height
        aspect = w / h
        ndc_x = ((np.arange(w) + 0.5) / w * 2.0 - 1.0)[None, :].repeat(h, axis=0)
        ndc_y = (1.0 - (np.arange(h) + 0.5) / h * 2.0)[:, None].repeat(w, axis=1)
        eye = np.asarray(self.eye, dtype=np.float64)
        if self.ortho_height is not None:
            half_h = self.ortho_height / 2.0
            origins = (
                eye[None, :]
                + (ndc_x.ravel() * half_h * aspect)[:, None] * right
                + (ndc_y.ravel() * half_h)[:, None] * up
            )
            dirs = np.broadcast_to(fwd, origins.shape).copy()
        else:
            th = math.tan(math.radians(self.vfov_deg) / 2.0)
            dirs = (
                fwd[None, :]
                + (ndc_x.ravel() * th * aspect)[:, None] * right
                + (ndc_y.ravel() * th)[:, None] * up
            )
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            origins = np.broadcast_to(eye, dirs.shape).copy()
        return origins, dirs

    def project(self, points: np.ndarray):
        """World points -> fractional (row, col) pixel coordinates."""
        right, up, fwd = self._basis()
        v = np.asarray(points, dtype=np.float64) - np.asarray(self.eye, dtype=np.float64)
        xc, yc, zc = v @ right, v @ up, v @ fwd
        aspect = self.width / self.height
        if self.ortho_height is not None:
            half_h = self.ortho_height / 2.0
            ndc_x = xc / (half_h * aspect)
            ndc_y = yc / half_h
        else:
            th = math.tan(math.radians(self.vfov_deg) / 2.0)
            with np.errstate(divide="ignore", invalid="ignore"):
                ndc_x = xc / zc / (th * aspect)
                ndc_y = yc / zc / th
        col = (ndc_x + 1.0) / 2.0 * self.width - 0.5
        row = (1.0 - ndc_y) / 2.0 * self.height - 0.5
        return row, col


@dataclass
class RenderParams:
    camera: Camera
    max_step_count: int = 1024  # preview ~32, quality ~512
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    cut_plane: tuple[tuple[float, float, float], float] | None = None
    shadow_steps: int = 64
    mip: int = 0

    def __post_init__(self):
        if self.max_step_count < 1:
            raise ValueError("max_step_count must be >= 1")
        if self.shadow_steps < 1:
            raise ValueError("shadow_steps must be >= 1")


def _ray_aabb(origins, dirs, lo, hi):
    """Slab intersection; returns (t_near, t_far) with t_near clamped to 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (lo[None, :] - origins) * inv
        t1 = (hi[None, :] - origins) * inv
        near_ax = np.minimum(t0, t1)
        far_ax = np.maximum(t0, t1)
    # A parallel axis constrains nothing when the origin lies inside its
    # slab (faces inclusive) and everything when it does not.
    parallel = dirs == 0.0
    inside = (origins >= lo[None, :]) & (origins <= hi[None, :])
    near_ax = np.where(parallel, np.where(inside, -np.inf, np.inf), near_ax)
    far_ax = np.where(parallel, np.where(inside, np.inf, -np.inf), far_ax)
    return np.maximum(near_ax.max(axis=1), 0.0), far_ax.min(axis=1)


def build_illumination_cache(
    svt: SparseVolumeTexture,
    tf: TransferFunction,
    lights,
    downsample_factor: int = 4,
    shadow_steps: int = 64,
) -> IlluminationCache:
    """Beer-Lambert transmittance from every cache voxel toward every light.

    Light contributions add linearly, so the cache of a union of light sets
    is the sum of the individual caches.
    """
    if downsample_factor < 1:
        raise ValueError("downsample_factor must be >= 1")
    vd = svt.virtual_dims
    dims = VolumeDims(
        -(-vd.x // downsample_factor),
        -(-vd.y // downsample_factor),
        -(-vd.z // downsample_factor),
    )
    f = float(downsample_factor)
    zc, yc, xc = np.meshgrid(
        (np.arange(dims.z) + 0.5) * f,
        (np.arange(dims.y) + 0.5) * f,
        (np.arange(dims.x) + 0.5) * f,
        indexing="ij",
    )
    centers = np.stack([xc.ravel(), yc.ravel(), zc.ravel()], axis=1)
    lo = np.zeros(3)
    hi = np.asarray([vd.x, vd.y, vd.z], dtype=np.float64)

    flat = np.zeros((centers.shape[0], 3), dtype=np.float64)
    for light in lights:
        if isinstance(light, DirectionalLight):
            d = -np.asarray(light.direction, dtype=np.float64)
            dirs = np.broadcast_to(d, centers.shape)
            t_stop = np.full(centers.shape[0], np.inf)
            atten = 1.0
        elif isinstance(light, PointLight):
            to_light = np.asarray(light.position, dtype=np.float64)[None, :] - centers
            dist = np.linalg.norm(to_light, axis=1)
            dist = np.maximum(dist, 1e-12)
            dirs = to_light / dist[:, None]
            t_stop = dist
            atten = 1.0 / (1.0 + (dist / light.radius) ** 2)
        else:
            raise TypeError(f"unknown light type {type(light).__name__}")

        t0, t1 = _ray_aabb(centers, dirs, lo, hi)
        t1 = np.minimum(t1, t_stop)
        length = np.maximum(t1 - t0, 0.0)
        dt = length / shadow_steps
        tau = np.zeros(centers.shape[0], dtype=np.float64)
        for j in range(shadow_steps):
            t = t0 + (j + 0.5) * dt
            p = centers + t[:, None] * dirs
            scalars = sample_trilinear_many(svt, p[:, 0], p[:, 1], p[:, 2])
            sigma, _ = tf.classify(scalars, svt.format)
            tau += sigma * dt
        trans = np.exp(-tau)
        weight = (atten * trans)[:, None]
        flat += np.asarray(light.intensity, dtype=np.float64)[None, :] * weight

    values = flat.reshape(dims.z, dims.y, dims.x, 3)
    return IlluminationCache(dims=dims, downsample_factor=downsample_factor, values=values)


def _march_block(svt, cache, tf, params, origins, dirs):
    n = origins.shape[0]
    vd = svt.virtual_dims
    lo = np.zeros(3)
    hi = np.asarray([vd.x, vd.y, vd.z], dtype=np.float64)
    t0, t1 = _ray_aabb(origins, dirs, lo, hi)
    hit = t1 > t0
    steps = params.max_step_count
    dt = np.where(hit, (t1 - t0) / steps, 0.0)

    radiance = np.zeros((n, 3), dtype=np.float64)
    trans = np.ones(n, dtype=np.float64)
    cut = params.cut_plane
    if cut is not None:
        cut_n = np.asarray(cut[0], dtype=np.float64)
        cut_off = float(cut[1])

    alive = np.flatnonzero(hit)
    for i in range(steps):
        if not len(alive):
            break
        t = t0[alive] + (i + 0.5) * dt[alive]
        p = origins[alive] + t[:, None] * dirs[alive]
        if cut is not None:
            visible = p @ cut_n + cut_off >= 0.0
        else:
            visible = None
        scalars = sample_trilinear_many(svt, p[:, 0], p[:, 1], p[:, 2], params.mip)
        sigma, rgb = tf.classify(scalars, svt.format)
        if visible is not None:
            sigma = np.where(visible, sigma, 0.0)
            rgb = np.where(visible[:, None], rgb, 0.0)
        # Incident light only matters where the transfer function emits;
        # rgb == 0 kills the contribution regardless of the cache value.
        source = tf.emission_scale * rgb
        lit = np.flatnonzero(rgb.any(axis=1))
        if len(lit):
            incident = cache.sample_incident(p[lit, 0], p[lit, 1], p[lit, 2])
            source[lit] *= 1.0 + incident
        e_half = np.exp(-0.5 * dt[alive] * sigma)
        radiance[alive] += (trans[alive] * e_half * dt[alive])[:, None] * source
        trans[alive] *= e_half * e_half
        alive = alive[trans[alive] > MIN_TRANSMITTANCE]
    return radiance, trans


def raymarch(
    svt: SparseVolumeTexture,
    cache: IlluminationCache,
    tf: TransferFunction,
    params: RenderParams,
    threads: int = 1,
) -> np.ndarray:
    """Render the volume to a float RGB image of shape (height, width, 3).

    Deterministic: identical inputs produce bit-identical images for any
    thread count (pixels are independent).
    """
    cam = params.camera
    origins, dirs = cam.rays()
    n = origins.shape[0]
    radiance = np.zeros((n, 3), dtype=np.float64)
    trans = np.ones(n, dtype=np.float64)

    if threads > 1 and cam.height > 1:
        blocks = np.array_split(np.arange(n), min(threads * 4, cam.height))
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {
                pool.submit(_march_block, svt, cache, tf, params, origins[b], dirs[b]): b
                for b in blocks
                if len(b)
            }
            for fut, b in futures.items():
                radiance[b], trans[b] = fut.result()
    else:
        radiance, trans = _march_block(svt, cache, tf, params, origins, dirs)

    background = np.asarray(params.background, dtype=np.float64)
    img = radiance + trans[:, None] * background[None, :]
    return img.reshape(cam.height, cam.width, 3)


def write_image(image: np.ndarray, path) -> None:
    """Write a binary PPM (P6), 8 bits per channel, values clamped to [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("image must have shape (height, width, 3)")
    h, w = image.shape[:2]
    quantized = np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(quantized.tobytes())


def luminance(image: np.ndarray) -> np.ndarray:
    return image @ np.asarray([0.2126, 0.7152, 0.0722])
