"""Point clouds, downsampling, and spherical depth-map projection.

Coordinates are meters in the sensor frame: x forward, y left, z up.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autograd import Tensor
from .errors import ConfigError, ContractError, EmptyInputError, ParseError, TruncationError


@dataclass
class PointCloud:
    points: np.ndarray
    intensity: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ContractError(f"points must be N x 3, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ContractError("point coordinates must be finite")
        self.points = pts
        if self.intensity is not None:
            inten = np.asarray(self.intensity, dtype=np.float64).reshape(-1)
            if inten.shape[0] != pts.shape[0]:
                raise ContractError(
                    f"{inten.shape[0]} intensities for {pts.shape[0]} points")
            self.intensity = inten

    def __len__(self) -> int:
        return self.points.shape[0]

    def take(self, idx: np.ndarray) -> "PointCloud":
        inten = None if self.intensity is None else self.intensity[idx]
        return PointCloud(self.points[idx], inten)


@dataclass(frozen=True)
class ProjectionConfig:
    """Range-image geometry. Both fields of view are centered on the x axis."""

    h_fov_deg: float = 90.0
    v_fov_deg: float = 26.8
    height: int = 64
    width: int = 512
    max_range: float = 120.0

    def __post_init__(self):
        if not 0 < self.h_fov_deg <= 360:
            raise ConfigError(f"horizontal FOV must be in (0, 360], got {self.h_fov_deg}")
        if not 0 < self.v_fov_deg <= 180:
            raise ConfigError(f"vertical FOV must be in (0, 180], got {self.v_fov_deg}")
        if self.height < 1 or self.width < 1:
            raise ConfigError(f"depth map dims must be positive, got {self.height}x{self.width}")
        if not self.max_range > 0:
            raise ConfigError(f"max range must be positive, got {self.max_range}")

    @property
    def pitch(self) -> tuple[float, float]:
        """Angular size of one pixel in radians, (vertical, horizontal)."""
        return (np.radians(self.v_fov_deg) / self.height,
                np.radians(self.h_fov_deg) / self.width)

    def pixel_center(self, row, col):
        """(azimuth, elevation) in radians at the center of a pixel."""
        v_pitch, h_pitch = self.pitch
        az = np.radians(self.h_fov_deg) / 2 - (np.asarray(col) + 0.5) * h_pitch
        el = np.radians(self.v_fov_deg) / 2 - (np.asarray(row) + 0.5) * v_pitch
        return az, el


@dataclass
class DepthMap:
    depth: np.ndarray
    valid: np.ndarray

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]


def random_downsample(cloud: PointCloud, n: int, seed: int) -> PointCloud:
    """Exactly ``n`` points: a seeded subset, or the whole cloud padded by resampling.

    Subsets keep the input order.
    """
    if n < 1:
        raise ContractError(f"n must be >= 1, got {n}")
    total = len(cloud)
    if total == 0:
        raise EmptyInputError("cannot downsample an empty cloud")
    rng = np.random.default_rng(seed)
    if total >= n:
        idx = np.sort(rng.choice(total, size=n, replace=False))
    else:
        idx = np.concatenate([np.arange(total), rng.choice(total, size=n - total, replace=True)])
    return cloud.take(idx)


def farthest_point_downsample(cloud: PointCloud, n: int) -> PointCloud:
    """Greedy max-min selection seeded at the point nearest the centroid.

    Ties resolve to the lowest index, so the result is fully deterministic.
    """
    if n < 1:
        raise ContractError(f"n must be >= 1, got {n}")
    total = len(cloud)
    if total == 0:
        raise EmptyInputError("cannot downsample an empty cloud")
    if n >= total:
        return cloud.take(np.arange(total))
    pts = cloud.points
    centroid = pts.mean(axis=0)
    chosen = [int(np.argmin(np.sum((pts - centroid) ** 2, axis=1)))]
    dist = np.sum((pts - pts[chosen[0]]) ** 2, axis=1)
    while len(chosen) < n:
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.sum((pts - pts[nxt]) ** 2, axis=1))
    return cloud.take(np.array(chosen))


def normalize_cloud(cloud: PointCloud) -> PointCloud:
    """Center on the centroid and scale the farthest point to unit distance."""
    if len(cloud) == 0:
        raise EmptyInputError("cannot normalize an empty cloud")
    centered = cloud.points - cloud.points.mean(axis=0)
    radius = np.sqrt(np.max(np.sum(centered ** 2, axis=1)))
    if radius > 0:
        centered = centered / radius
    return PointCloud(centered, cloud.intensity)


def pcm_project(cloud: PointCloud, cfg: ProjectionConfig) -> DepthMap:
    """Spherical projection; each pixel keeps its nearest return.

    Rows run top-down in elevation and columns left-to-right (decreasing
    azimuth). Points outside either field of view are dropped. Ranges beyond
    ``cfg.max_range`` are clipped to it.
    """
    depth = np.full((cfg.height, cfg.width), np.inf)
    if len(cloud):
        x, y, z = cloud.points.T
        rng_ = np.sqrt(x * x + y * y + z * z)
        az = np.arctan2(y, x)
        el = np.arctan2(z, np.sqrt(x * x + y * y))
        half_h = np.radians(cfg.h_fov_deg) / 2
        half_v = np.radians(cfg.v_fov_deg) / 2
        keep = (rng_ > 0) & (np.abs(az) <= half_h) & (np.abs(el) <= half_v)
        v_pitch, h_pitch = cfg.pitch
        col = np.floor((half_h - az[keep]) / h_pitch).astype(np.int64)
        row = np.floor((half_v - el[keep]) / v_pitch).astype(np.int64)
        np.clip(col, 0, cfg.width - 1, out=col)
        np.clip(row, 0, cfg.height - 1, out=row)
        r = np.minimum(rng_[keep], cfg.max_range)
        np.minimum.at(depth.reshape(-1), row * cfg.width + col, r)
    valid = np.isfinite(depth)
    depth[~valid] = 0.0
    return DepthMap(depth, valid)


def depthmap_array(dm: DepthMap, cfg: ProjectionConfig) -> np.ndarray:
    """``2 x H x W`` array: normalized depth and validity."""
    return np.stack([dm.depth / cfg.max_range, dm.valid.astype(np.float64)])


def depthmap_to_tensor(dm: DepthMap, cfg: ProjectionConfig) -> Tensor:
    return Tensor(depthmap_array(dm, cfg))


# --- 16-bit PGM export -------------------------------------------------------

def save_depth_pgm(dm: DepthMap, path, max_range: float) -> None:
    """Binary PGM, maxval 65535, big-endian samples; invalid pixels are 0."""
    scaled = np.where(dm.valid, np.clip(dm.depth / max_range, 0.0, 1.0), 0.0)
    pix = np.rint(scaled * 65535).astype(">u2")
    header = f"P5\n{dm.width} {dm.height}\n65535\n".encode("ascii")
    Path(path).write_bytes(header + pix.tobytes())


def load_depth_pgm(path, max_range: float) -> DepthMap:
    raw = Path(path).read_bytes()
    fields, offset = _read_pnm_header(raw, b"P5", 3)
    width, height, maxval = fields
    if maxval != 65535:
        raise ParseError(f"{path}: expected maxval 65535, got {maxval}", offset)
    need = width * height * 2
    body = raw[offset:offset + need]
    if len(body) < need:
        raise TruncationError(f"{path}: expected {need} pixel bytes, found {len(body)}", offset)
    pix = np.frombuffer(body, dtype=">u2").reshape(height, width).astype(np.float64)
    valid = pix > 0
    return DepthMap(pix / 65535 * max_range, valid)


def _read_pnm_header(raw: bytes, magic: bytes, nfields: int) -> tuple[list[int], int]:
    """Parse a netpbm header; returns the integer fields and payload offset."""
    if raw[:2] != magic:
        raise ParseError(f"bad magic {raw[:2]!r}, expected {magic!r}", 0)
    pos = 2
    fields: list[int] = []
    while len(fields) < nfields:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(raw):
            raise TruncationError("header ended early", pos)
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and raw[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise ParseError(f"unexpected byte {raw[pos:pos + 1]!r} in header", pos)
        fields.append(int(raw[start:pos]))
    # exactly one whitespace byte separates header from raster
    if pos >= len(raw) or not raw[pos:pos + 1].isspace():
        raise TruncationError("missing raster after header", pos)
    return fields, pos + 1
