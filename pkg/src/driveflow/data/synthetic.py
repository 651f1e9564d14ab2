"""Deterministic synthetic driving scenes.

Each scene draws a road curvature and the distance to an obstacle ahead.
The camera image shows the curving lane boundaries but never the obstacle;
the LiDAR cloud holds a flat ground plane plus the obstacle cluster. Steering
is therefore recoverable from the image alone and speed from the cloud alone.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DriveflowError
from ..pointcloud import PointCloud
from .codecs import save_cloud, save_image_ppm
from .dataset import DatasetManifest, DrivingBehavior, ManifestRecord, Sample, SPLITS, write_manifest

LIDAR_HEIGHT_M = 1.73
CAMERA_HEIGHT_M = 1.5
LANE_HALF_WIDTH_M = 1.8


@dataclass(frozen=True)
class SceneParams:
    kappa_range: tuple[float, float] = (-0.04, 0.04)
    obstacle_range: tuple[float, float] = (5.0, 40.0)
    max_speed_kmh: float = 60.0
    wheelbase_m: float = 2.7
    image_height: int = 48
    image_width: int = 96
    pixel_noise: float = 0.05
    point_noise: float = 0.02
    ground_points: int = 512
    obstacle_points: int = 64
    counts: tuple[int, int, int] = (8, 2, 2)

    def validate(self) -> None:
        for name in ("kappa_range", "obstacle_range"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
                raise ConfigError(f"{name} must be a finite (low, high) pair, got {(lo, hi)}")
        if self.obstacle_range[0] <= 0:
            raise ConfigError("obstacle distances must be positive")
        if self.max_speed_kmh <= 0 or self.wheelbase_m <= 0:
            raise ConfigError("max speed and wheelbase must be positive")
        if self.image_height < 8 or self.image_width < 8:
            raise ConfigError(f"image must be at least 8x8, got {self.image_height}x{self.image_width}")
        if self.pixel_noise < 0 or self.point_noise < 0:
            raise ConfigError("noise levels must be non-negative")
        if self.ground_points < 0 or self.obstacle_points < 1:
            raise ConfigError("need a non-negative ground count and at least one obstacle point")
        if len(self.counts) != 3 or min(self.counts) < 0:
            raise ConfigError(f"counts must be three non-negative ints, got {self.counts}")


def behavior_from_scene(kappa: float, distance: float, params: SceneParams) -> DrivingBehavior:
    """Bicycle-model steering for the curvature; speed ramps linearly with free distance."""
    d_min, d_max = params.obstacle_range
    if d_max > d_min:
        frac = min(max((distance - d_min) / (d_max - d_min), 0.0), 1.0)
    else:
        frac = 1.0 if distance >= d_max else 0.0
    return DrivingBehavior(float(np.arctan(params.wheelbase_m * kappa)), params.max_speed_kmh * frac)


def _render_image(kappa: float, params: SceneParams, rng: np.random.Generator) -> np.ndarray:
    h, w = params.image_height, params.image_width
    horizon = int(round(0.35 * h))
    focal = w / 2.0
    img = np.empty((3, h, w))
    img[:, :horizon] = np.array([0.55, 0.65, 0.85])[:, None, None]
    img[:, horizon:] = 0.3
    # lane boundaries on the ground under a pinhole camera looking along +x;
    # sampling inverse distance spreads the samples evenly over image rows
    x = 1.0 / np.linspace(1.0 / 3.0, 1.0 / 80.0, 4 * h)
    for side in (-1.0, 1.0):
        y = 0.5 * kappa * x * x + side * LANE_HALF_WIDTH_M
        u = np.floor(w / 2.0 - focal * y / x).astype(int)
        v = np.floor(horizon + focal * CAMERA_HEIGHT_M / x).astype(int)
        ok = (u >= 0) & (u < w) & (v >= horizon) & (v < h)
        for du in (0, 1):
            uu = np.clip(u[ok] + du, 0, w - 1)
            img[:, v[ok], uu] = np.array([1.0, 1.0, 0.8])[:, None]
    img += rng.normal(0.0, params.pixel_noise, img.shape)
    # store exactly what an 8-bit PPM can hold
    return np.rint(np.clip(img, 0.0, 1.0) * 255) / 255


def _scan_cloud(kappa: float, distance: float, params: SceneParams, rng: np.random.Generator) -> PointCloud:
    ground = np.column_stack([
        rng.uniform(2.0, 50.0, params.ground_points),
        rng.uniform(-15.0, 15.0, params.ground_points),
        np.full(params.ground_points, -LIDAR_HEIGHT_M),
    ])
    m = params.obstacle_points
    lateral = 0.5 * kappa * distance * distance
    obstacle = np.column_stack([
        distance + rng.uniform(0.0, 0.6, m),
        lateral + rng.uniform(-0.9, 0.9, m),
        -LIDAR_HEIGHT_M + rng.uniform(0.2, 1.6, m),
    ])
    pts = np.vstack([ground, obstacle])
    pts += rng.normal(0.0, params.point_noise, pts.shape)
    # float32-representable so the binary codec round-trips exactly
    return PointCloud(pts.astype(np.float32).astype(np.float64))


def generate_synthetic_scene(params: SceneParams, index: int, seed: int) -> Sample:
    params.validate()
    rng = np.random.default_rng([seed, index])
    kappa = float(rng.uniform(*params.kappa_range))
    distance = float(rng.uniform(*params.obstacle_range))
    image = _render_image(kappa, params, rng)
    cloud = _scan_cloud(kappa, distance, params, rng)
    return Sample(image, cloud, behavior_from_scene(kappa, distance, params), timestamp=float(index))


def generate_dataset(params: SceneParams, seed: int, out_dir) -> DatasetManifest:
    """Write ``images/``, ``clouds/`` and ``manifest.csv`` (+ ``manifest.json``) under ``out_dir``."""
    params.validate()
    out = Path(out_dir)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
        (out / "clouds").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DriveflowError(f"cannot create dataset directories under {out}: {exc}") from exc

    splits = [name for name, n in zip(SPLITS, params.counts) for _ in range(n)]
    records = []
    for i, split in enumerate(splits):
        s = generate_synthetic_scene(params, i, seed)
        img_rel = f"images/{i:06d}.ppm"
        cloud_rel = f"clouds/{i:06d}.pcb"
        try:
            save_image_ppm(s.image, out / img_rel)
            save_cloud(s.cloud, out / cloud_rel)
        except OSError as exc:
            raise DriveflowError(f"cannot write sample {i} under {out}: {exc}") from exc
        records.append(ManifestRecord(img_rel, cloud_rel, s.behavior.angle, s.behavior.speed, s.timestamp, split))

    meta = {"fps": 1, "max_speed_kmh": params.max_speed_kmh, "angle_units": "rad", "speed_units": "km/h",
            "seed": seed, "scene": asdict(params)}
    manifest = DatasetManifest(records, meta, out)
    try:
        write_manifest(manifest, out / "manifest.csv")
    except OSError as exc:
        raise DriveflowError(f"cannot write manifest under {out}: {exc}") from exc
    return manifest
