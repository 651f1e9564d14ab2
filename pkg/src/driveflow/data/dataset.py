"""Samples, manifests, and conversion of samples into model batches."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..errors import ContractError, DimensionError, ParseError
from ..models import DrivingModel, ModelInputs
from ..pointcloud import PointCloud, ProjectionConfig, depthmap_array, pcm_project, random_downsample
from .codecs import load_cloud, load_image_ppm
from .preprocess import resize_image

MANIFEST_HEADER = ["image", "cloud", "angle_rad", "speed_kmh", "timestamp_s", "split"]
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class DrivingBehavior:
    """Steering angle in radians (positive turns left) and raw speed in km/h."""

    angle: float
    speed: float

    def __post_init__(self):
        if not (np.isfinite(self.angle) and np.isfinite(self.speed)):
            raise ContractError(f"behavior must be finite, got ({self.angle}, {self.speed})")
        if self.speed < 0:
            raise ContractError(f"speed must be non-negative, got {self.speed}")


@dataclass
class Sample:
    image: np.ndarray
    cloud: PointCloud
    behavior: DrivingBehavior
    timestamp: float = 0.0


@dataclass(frozen=True)
class ManifestRecord:
    image: str
    cloud: str
    angle_rad: float
    speed_kmh: float
    timestamp_s: float
    split: str = "train"


@dataclass
class DatasetManifest:
    records: list[ManifestRecord]
    metadata: dict = field(default_factory=dict)
    root: Path = Path(".")

    def __len__(self) -> int:
        return len(self.records)

    def split(self, name: str) -> "DatasetManifest":
        return replace(self, records=[r for r in self.records if r.split == name])


def write_manifest(manifest: DatasetManifest, path) -> None:
    """CSV records plus a JSON sidecar (``<stem>.json``) for metadata."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for r in manifest.records:
            writer.writerow([r.image, r.cloud, repr(float(r.angle_rad)), repr(float(r.speed_kmh)),
                             repr(float(r.timestamp_s)), r.split])
    path.with_suffix(".json").write_text(json.dumps(manifest.metadata, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != MANIFEST_HEADER:
        raise ParseError(f"{path}:1: manifest header must be {','.join(MANIFEST_HEADER)}", 1)
    records = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(MANIFEST_HEADER):
            raise ParseError(f"{path}:{lineno}: expected {len(MANIFEST_HEADER)} fields, got {len(row)}", lineno)
        try:
            rec = ManifestRecord(row[0], row[1], float(row[2]), float(row[3]), float(row[4]), row[5])
        except ValueError:
            raise ParseError(f"{path}:{lineno}: non-numeric angle/speed/timestamp", lineno) from None
        if rec.split not in SPLITS:
            raise ParseError(f"{path}:{lineno}: unknown split {rec.split!r}", lineno)
        records.append(rec)
    meta_path = path.with_suffix(".json")
    metadata = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return DatasetManifest(records, metadata, path.parent)


def load_samples(manifest: DatasetManifest) -> list[Sample]:
    out = []
    for r in manifest.records:
        out.append(Sample(
            image=load_image_ppm(manifest.root / r.image),
            cloud=load_cloud(manifest.root / r.cloud),
            behavior=DrivingBehavior(r.angle_rad, r.speed_kmh),
            timestamp=r.timestamp_s,
        ))
    return out


@dataclass(frozen=True)
class InputConfig:
    """How raw samples become model inputs; stored alongside checkpoints."""

    max_speed_kmh: float = 60.0
    cloud_scale_m: float = 50.0
    downsample_seed: int = 0
    projection: ProjectionConfig | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "InputConfig":
        proj = d.get("projection")
        return cls(float(d["max_speed_kmh"]), float(d["cloud_scale_m"]), int(d["downsample_seed"]),
                   ProjectionConfig(**proj) if proj else None)


def behavior_targets(behaviors, max_speed_kmh: float) -> np.ndarray:
    """``B x 2`` array of (angle radians, speed normalized by max speed)."""
    return np.array([[b.angle, b.speed / max_speed_kmh] for b in behaviors], dtype=np.float64).reshape(-1, 2)


def prepare_image(image: np.ndarray, shape) -> np.ndarray:
    c, h, w = shape
    if image.shape[0] != c:
        raise DimensionError(f"image has {image.shape[0]} channels, model expects {c}")
    if image.shape[1:] != (h, w):
        image = resize_image(image, h, w)
    return image


def prepare_inputs(samples: list[Sample], model: DrivingModel, cfg: InputConfig) -> tuple[ModelInputs, np.ndarray]:
    """Stack samples into a batch shaped for ``model`` and return (inputs, targets)."""
    if not samples:
        raise ContractError("no samples to prepare")
    spec = model.spec_dict()
    images = np.stack([prepare_image(s.image, spec["image"]["input_shape"]) for s in samples])
    depth = points = None
    if model.kind == "pcm":
        proj = cfg.projection or ProjectionConfig()
        d_shape = tuple(spec["depth"]["input_shape"][1:])
        if (proj.height, proj.width) != d_shape:
            raise DimensionError(f"projection {proj.height}x{proj.width} does not match depth branch input {d_shape}")
        depth = np.stack([depthmap_array(pcm_project(s.cloud, proj), proj) for s in samples])
    elif model.kind == "pn":
        n = spec["pointnet"]["num_points"]
        points = np.stack([
            random_downsample(s.cloud, n, cfg.downsample_seed).points / cfg.cloud_scale_m
            for s in samples
        ])
    targets = behavior_targets([s.behavior for s in samples], cfg.max_speed_kmh)
    return ModelInputs(images, depth, points), targets
