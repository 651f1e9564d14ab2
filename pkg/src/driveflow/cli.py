"""Command-line entry point: ``driveflow generate | project | train | eval | predict``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path


from .config import load_run_config
from .data import (
    InputConfig, generate_dataset, load_cloud, load_image_ppm, load_samples, prepare_inputs, read_manifest,
    select_fraction,
)
from .errors import ConfigError, DimensionError, DriveflowError, TrainingError
from .evaluation import evaluate, write_curves_csv
from .models import MODEL_KINDS, ModelInputs, build_io_model, build_pcm_model, build_pn_model
from .pointcloud import depthmap_array, pcm_project, random_downsample, save_depth_pgm
from .training import SplitData, load_checkpoint, predict_array, save_checkpoint, train, write_history_csv

log = logging.getLogger("driveflow")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(DriveflowError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _manifest_path(path) -> Path:
    p = Path(path)
    return p / "manifest.csv" if p.is_dir() else p


# --- commands ------------------------------------------------------------------

def cmd_generate(cfg, args) -> int:
    params = cfg.scene()
    if args.counts:
        params = type(params)(**{**params.__dict__, "counts": tuple(int(x) for x in args.counts.split(","))})
    out = Path(args.out or cfg["run.data_dir"])
    manifest = generate_dataset(params, cfg.seed, out)
    path = out / "manifest.csv"
    print(f"manifest={path}")
    print(f"records={len(manifest)}")
    return EXIT_OK


def cmd_project(cfg, args) -> int:
    proj = cfg.projection()
    cloud = load_cloud(args.cloud)
    dm = pcm_project(cloud, proj)
    save_depth_pgm(dm, args.out, proj.max_range)
    print(f"depth_map={args.out}")
    print(f"valid_pixels={int(dm.valid.sum())}")
    return EXIT_OK


def _build_model(cfg):
    kind, seed = cfg["model.kind"], cfg.seed
    if kind == "io":
        return build_io_model(cfg.image_backbone(), seed)
    if kind == "pcm":
        return build_pcm_model(cfg.image_backbone(), cfg.depth_backbone(), cfg.fusion(), seed)
    return build_pn_model(cfg.image_backbone(), cfg.pointnet(), cfg.fusion(), seed)


def _split(manifest, name, model, inputs):
    part = manifest.split(name)
    if not len(part):
        return None
    return prepare_inputs(load_samples(part), model, inputs)


def cmd_train(cfg, args) -> int:
    manifest_path = _manifest_path(args.data or cfg["run.data_dir"])
    if not manifest_path.exists():
        raise DriveflowError(f"manifest not found: {manifest_path}")
    manifest = read_manifest(manifest_path)
    fraction, mode = cfg["train.fraction"], cfg["train.fraction_mode"]
    if not 0 < fraction <= 1 or mode not in ("head", "random"):
        raise ConfigError(f"fraction must be in (0, 1] with mode head or random, got {fraction} {mode!r}")
    if fraction < 1:
        manifest = select_fraction(manifest, fraction, cfg.seed, mode)
    model = _build_model(cfg)
    inputs = cfg.inputs(manifest.metadata.get("max_speed_kmh"))
    train_split = _split(manifest, "train", model, inputs)
    if train_split is None:
        raise DriveflowError(f"{manifest_path}: no training records")
    data = SplitData(train_split, _split(manifest, "val", model, inputs))
    log.info("training %s model (%d parameters) on %d samples", model.kind, model.parameter_count(), len(train_split[0]))

    tcfg = cfg.train()
    result = train(model, data, tcfg, extra={"inputs": inputs.to_dict()})
    out = Path(args.out or cfg["run.out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.best, out / "best.ckpt")
    write_history_csv(result.history, out / "history.csv")
    best = result.best
    print(f"checkpoint={out / 'best.ckpt'}")
    print(f"history={out / 'history.csv'}")
    print(f"parameters={model.parameter_count()}")
    print(f"best_epoch={best.epoch}")
    print(f"val_angle_mae={best.val_angle_mae!r}")
    print(f"val_speed_mae={best.val_speed_mae!r}")
    print(f"qualified={'yes' if best.qualified else 'no'}")
    return EXIT_OK


def _load(path):
    ckpt = load_checkpoint(path)
    return ckpt, ckpt.build_model(), InputConfig.from_dict(ckpt.extra["inputs"])


def cmd_eval(cfg, args) -> int:
    ckpt, model, inputs = _load(args.checkpoint)
    manifest = read_manifest(_manifest_path(args.data or cfg["run.data_dir"]))
    split = args.split or cfg["eval.split"]
    prepared = _split(manifest, split, model, inputs)
    if prepared is None:
        raise DriveflowError(f"split {split!r} has no records")
    pred = predict_array(model, prepared[0])
    label = f"{model.kind}-{ckpt.spec['image']['variant']}"
    report = evaluate(
        pred, prepared[1], inputs.max_speed_kmh, label, cfg["eval.thresholds"], cfg["eval.report_threshold"],
        (cfg["eval.sigma_angle"], cfg["eval.sigma_speed"]), math.radians(cfg["eval.angle_cut_deg"]),
        cfg["eval.stop_cut_kmh"],
    )
    out = Path(args.out) if args.out else Path(args.checkpoint).with_name(f"curves_{split}.csv")
    write_curves_csv(report.curves, out)
    print(f"model={label}")
    print(f"split={split}")
    for line in report.lines():
        print(line)
    print(f"curves={out}")
    return EXIT_OK


def cmd_predict(cfg, args) -> int:
    ckpt, model, inputs = _load(args.checkpoint)
    image = load_image_ppm(args.image)
    expected = tuple(ckpt.spec["image"]["input_shape"])
    if image.shape != expected:
        raise DimensionError(f"image {args.image} is {image.shape[1]}x{image.shape[2]} (C={image.shape[0]}), "
                             f"model expects {expected[1]}x{expected[2]} (C={expected[0]})")
    batch = ModelInputs(image[None])
    if model.kind == "io":
        if args.cloud:
            log.warning("io model ignores --cloud %s", args.cloud)
    else:
        if not args.cloud:
            raise UsageError(f"{model.kind} model needs --cloud")
        cloud = load_cloud(args.cloud)
        if model.kind == "pcm":
            proj = inputs.projection
            batch.depth = depthmap_array(pcm_project(cloud, proj), proj)[None]
        else:
            n = ckpt.spec["pointnet"]["num_points"]
            batch.points = (random_downsample(cloud, n, inputs.downsample_seed).points / inputs.cloud_scale_m)[None]
    p = model.predict(batch)[0]
    print(f"angle_rad={p.angle!r}")
    print(f"angle_deg={math.degrees(p.angle)!r}")
    print(f"speed_norm={p.speed!r}")
    print(f"speed_kmh={p.speed * inputs.max_speed_kmh!r}")
    return EXIT_OK


# --- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="config file (falls back to $DRIVEFLOW_CONFIG)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="seed for data, init and shuffling")
    common.add_argument("--set", action="append", default=argparse.SUPPRESS, metavar="SECTION.KEY=VALUE",
                        help="override one config key (repeatable)")

    parser = _Parser(prog="driveflow", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", parents=[common], help="write a synthetic dataset")
    p.add_argument("--out", help="output directory (default [run] data_dir)")
    p.add_argument("--counts", help="train,val,test sample counts")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("project", parents=[common], help="project a cloud to a 16-bit PGM depth map")
    p.add_argument("cloud")
    p.add_argument("--out", required=True)
    p.add_argument("--h-fov", type=float, dest="h_fov_deg")
    p.add_argument("--v-fov", type=float, dest="v_fov_deg")
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--max-range", type=float, dest="max_range")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("train", parents=[common], help="train a model and keep the best checkpoint")
    p.add_argument("--data", help="dataset directory or manifest.csv")
    p.add_argument("--model", choices=MODEL_KINDS)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--fraction", type=float, help="train on this share of the manifest")
    p.add_argument("--fraction-mode", choices=("head", "random"), dest="fraction_mode")
    p.add_argument("--out", help="output directory for best.ckpt and history.csv")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--split", choices=("train", "val", "test"))
    p.add_argument("--out", help="accuracy curve CSV path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", parents=[common], help="predict angle and speed for one frame")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--cloud")
    p.set_defaults(func=cmd_predict)
    return parser


# flag name -> config key
_FLAG_KEYS = {
    "h_fov_deg": "projection.h_fov_deg", "v_fov_deg": "projection.v_fov_deg", "height": "projection.height",
    "width": "projection.width", "max_range": "projection.max_range", "model": "model.kind",
    "epochs": "train.epochs", "lr": "train.lr", "batch_size": "train.batch_size", "seed": "run.seed",
    "fraction": "train.fraction", "fraction_mode": "train.fraction_mode",
}


def collect_overrides(args) -> list[str]:
    overrides = list(getattr(args, "set", []) or [])
    for flag, key in _FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    return overrides


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s", stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_run_config(getattr(args, "config", None), collect_overrides(args))
        return args.func(cfg, args)
    except (ConfigError, UsageError) as exc:
        print(f"driveflow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingError as exc:
        print(f"driveflow: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DriveflowError, OSError) as exc:
        print(f"driveflow: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
