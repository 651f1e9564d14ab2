"""Run configuration: ``[section]`` / ``key = value`` files plus overrides.

Precedence is override > file > built-in default. Every key is checked
against :data:`SCHEMA`; unknown sections or keys are errors.
"""

from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass

from .data.dataset import InputConfig
from .data.synthetic import SceneParams
from .errors import ConfigError
from .models import MODEL_KINDS, BackboneSpec, FusionSpec, PointNetSpec
from .pointcloud import ProjectionConfig
from .training import TrainConfig

ENV_VAR = "DRIVEFLOW_CONFIG"


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip())


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(",") if x.strip())


# section -> key -> (parser, default as written in a config file)
SCHEMA: dict[str, dict[str, tuple]] = {
    "run": {
        "seed": (int, "0"),
        "data_dir": (str, "data"),
        "out_dir": (str, "run"),
    },
    "scene": {
        "kappa_min": (float, "-0.04"),
        "kappa_max": (float, "0.04"),
        "obstacle_min": (float, "5.0"),
        "obstacle_max": (float, "40.0"),
        "max_speed_kmh": (float, "60.0"),
        "wheelbase_m": (float, "2.7"),
        "image_height": (int, "48"),
        "image_width": (int, "96"),
        "pixel_noise": (float, "0.05"),
        "point_noise": (float, "0.02"),
        "ground_points": (int, "512"),
        "obstacle_points": (int, "64"),
        "train_count": (int, "8"),
        "val_count": (int, "2"),
        "test_count": (int, "2"),
    },
    "projection": {
        "h_fov_deg": (float, "90.0"),
        "v_fov_deg": (float, "26.8"),
        "height": (int, "64"),
        "width": (int, "512"),
        "max_range": (float, "120.0"),
    },
    "model": {
        "kind": (str, "io"),
        "backbone": (str, "tinyconv"),
        "image_height": (int, "48"),
        "image_width": (int, "96"),
        "conv_widths": (_ints, "8,16,32,32"),
        "fc_widths": (_ints, "64"),
        "depth_conv_widths": (_ints, "8,16,32,32"),
        "pointnet_widths": (_ints, "64,64,128,1024"),
        "num_points": (int, "1024"),
        "fusion_hidden": (int, "256"),
        "cloud_scale_m": (float, "50.0"),
        "downsample_seed": (int, "0"),
    },
    "train": {
        "epochs": (int, "125"),
        "batch_size": (int, "16"),
        "lr": (float, "0.001"),
        "beta1": (float, "0.9"),
        "beta2": (float, "0.999"),
        "eps": (float, "1e-8"),
        "angle_tolerance": (float, repr(5.0 / 180.0 * math.pi)),
        "speed_tolerance": (float, "0.25"),
        "angle_scale": (float, repr(math.radians(20.0))),
        "eval_batch_size": (int, "64"),
        "fraction": (float, "1.0"),
        "fraction_mode": (str, "head"),
    },
    "eval": {
        "split": (str, "test"),
        "thresholds": (_floats, ",".join(repr(0.5 * i) for i in range(1, 31))),
        "report_threshold": (float, "5.0"),
        "sigma_angle": (float, "0.1"),
        "sigma_speed": (float, "0.1"),
        "angle_cut_deg": (float, "2.0"),
        "stop_cut_kmh": (float, "5.0"),
    },
}


def parse_override(text: str) -> tuple[str, str, str]:
    """``section.key=value`` -> (section, key, value)."""
    name, sep, value = text.partition("=")
    section, dot, key = name.strip().partition(".")
    if not sep or not dot:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    return section, key, value.strip()


def _check_key(section: str, key: str, where: str) -> None:
    if section not in SCHEMA:
        raise ConfigError(f"{where}: unknown section [{section}]; expected one of {', '.join(SCHEMA)}")
    if key not in SCHEMA[section]:
        raise ConfigError(f"{where}: unknown key {key!r} in [{section}]")


def read_config_file(path) -> dict[tuple[str, str], str]:
    parser = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    raw = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            _check_key(section, key, str(path))
            raw[(section, key)] = value
    return raw


@dataclass
class RunConfig:
    values: dict[tuple[str, str], object]

    def __getitem__(self, dotted: str):
        section, _, key = dotted.partition(".")
        return self.values[(section, key)]

    @property
    def seed(self) -> int:
        return self["run.seed"]

    def scene(self) -> SceneParams:
        g = lambda k: self["scene." + k]  # noqa: E731
        return SceneParams(
            kappa_range=(g("kappa_min"), g("kappa_max")),
            obstacle_range=(g("obstacle_min"), g("obstacle_max")),
            max_speed_kmh=g("max_speed_kmh"), wheelbase_m=g("wheelbase_m"),
            image_height=g("image_height"), image_width=g("image_width"),
            pixel_noise=g("pixel_noise"), point_noise=g("point_noise"),
            ground_points=g("ground_points"), obstacle_points=g("obstacle_points"),
            counts=(g("train_count"), g("val_count"), g("test_count")),
        )

    def projection(self) -> ProjectionConfig:
        return ProjectionConfig(*(self["projection." + k] for k in
                                  ("h_fov_deg", "v_fov_deg", "height", "width", "max_range")))

    def image_backbone(self) -> BackboneSpec:
        if self["model.backbone"] == "nvidia":
            return BackboneSpec.nvidia()
        return BackboneSpec(self["model.backbone"], (3, self["model.image_height"], self["model.image_width"]),
                            self["model.conv_widths"], self["model.fc_widths"])

    def depth_backbone(self) -> BackboneSpec:
        proj = self.projection()
        return BackboneSpec("tinyconv", (2, proj.height, proj.width), self["model.depth_conv_widths"], ())

    def pointnet(self) -> PointNetSpec:
        return PointNetSpec(self["model.pointnet_widths"], self["model.num_points"])

    def fusion(self) -> FusionSpec:
        return FusionSpec(self["model.fusion_hidden"])

    def inputs(self, max_speed_kmh: float | None = None) -> InputConfig:
        return InputConfig(max_speed_kmh if max_speed_kmh is not None else self["scene.max_speed_kmh"],
                           self["model.cloud_scale_m"], self["model.downsample_seed"],
                           self.projection() if self["model.kind"] == "pcm" else None)

    def train(self) -> TrainConfig:
        g = lambda k: self["train." + k]  # noqa: E731
        return TrainConfig(
            epochs=g("epochs"), batch_size=g("batch_size"), lr=g("lr"), beta1=g("beta1"), beta2=g("beta2"),
            eps=g("eps"), seed=self.seed, angle_tolerance=g("angle_tolerance"),
            speed_tolerance=g("speed_tolerance"), angle_scale=g("angle_scale"),
            eval_batch_size=g("eval_batch_size"),
        )


def load_run_config(path=None, overrides=(), use_env: bool = True) -> RunConfig:
    """Merge defaults, the config file (``path`` or ``$DRIVEFLOW_CONFIG``) and overrides."""
    raw = {(s, k): default for s, keys in SCHEMA.items() for k, (_, default) in keys.items()}
    if path is None and use_env:
        path = os.environ.get(ENV_VAR) or None
    if path is not None:
        raw.update(read_config_file(path))
    for item in overrides:
        section, key, value = parse_override(item) if isinstance(item, str) else item
        _check_key(section, key, "override")
        raw[(section, key)] = value
    values = {}
    for (section, key), text in raw.items():
        conv = SCHEMA[section][key][0]
        try:
            values[(section, key)] = conv(text)
        except ValueError:
            raise ConfigError(f"[{section}] {key} = {text!r} is not a valid {conv.__name__.strip('_')}") from None
    if values[("model", "kind")] not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {values[('model', 'kind')]!r}; valid kinds: {', '.join(MODEL_KINDS)}")
    return RunConfig(values)
