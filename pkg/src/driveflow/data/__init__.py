"""Dataset records, file codecs, preprocessing, and the synthetic scene generator."""

from .codecs import load_cloud, load_image_ppm, save_cloud, save_image_ppm
from .dataset import (
    DatasetManifest, DrivingBehavior, InputConfig, ManifestRecord, Sample, behavior_targets,
    load_samples, prepare_inputs, read_manifest, write_manifest,
)
from .preprocess import resample_to_1fps, resize_image, select_fraction
from .synthetic import SceneParams, behavior_from_scene, generate_dataset, generate_synthetic_scene

__all__ = [
    "DatasetManifest", "DrivingBehavior", "InputConfig", "ManifestRecord", "Sample", "SceneParams",
    "behavior_from_scene", "behavior_targets", "generate_dataset", "generate_synthetic_scene",
    "load_cloud", "load_image_ppm", "load_samples", "prepare_inputs", "read_manifest",
    "resample_to_1fps", "resize_image", "save_cloud", "save_image_ppm", "select_fraction",
    "write_manifest",
]
