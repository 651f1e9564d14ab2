"""RMSD training loop, best-checkpoint selection, and checkpoint files."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autograd import Adam, Tape, Tensor, backward, ops
from .errors import (
    CheckpointError, CheckpointShapeError, CheckpointTruncatedError, CheckpointVersionError,
    ConfigError, ContractError, TrainingError,
)
from .models import DrivingModel, ModelInputs, model_from_spec

ANGLE_TOLERANCE = 5.0 / 180.0 * math.pi
SPEED_TOLERANCE = 0.25

CKPT_MAGIC = b"DFCK"
CKPT_VERSION = 1

HISTORY_HEADER = ["epoch", "train_rmsd", "val_angle_mae", "val_speed_mae", "qualified"]


@dataclass
class TrainConfig:
    epochs: int = 125
    batch_size: int = 16
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    angle_tolerance: float = ANGLE_TOLERANCE
    speed_tolerance: float = SPEED_TOLERANCE
    # radians that count as one unit of loss, against 1.0 of normalized speed
    angle_scale: float = math.radians(20.0)
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    eval_batch_size: int = 64

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ConfigError("batch sizes must be positive")
        if self.lr < 0:
            raise ConfigError(f"learning rate must be non-negative, got {self.lr}")
        if self.angle_tolerance <= 0 or self.speed_tolerance <= 0:
            raise ConfigError("tolerances must be positive")
        if self.angle_scale <= 0:
            raise ConfigError("angle scale must be positive")
        if len(self.split_fractions) != 3 or min(self.split_fractions) < 0 \
                or abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must be three non-negative values summing to 1, got {self.split_fractions}")


# --- loss --------------------------------------------------------------------

def rmsd_loss(pred: Tensor, truth, angle_scale: float = 1.0) -> Tensor:
    """sqrt of the mean squared error over the batch and both targets.

    ``pred`` and ``truth`` are ``B x 2`` (angle radians, normalized speed);
    angle errors are divided by ``angle_scale`` first.
    """
    truth = np.asarray(truth, dtype=np.float64).reshape(-1, 2)
    if pred.shape[0] == 0 or truth.shape[0] == 0:
        raise ContractError("rmsd_loss on an empty batch")
    if pred.shape != truth.shape:
        raise ContractError(f"prediction batch {pred.shape} does not match truth {truth.shape}")
    weights = np.array([1.0 / angle_scale, 1.0])
    err = ops.mul(ops.sub(pred, truth), weights)
    return ops.sqrt(ops.mean(ops.square(err)))


# --- checkpoint rule ---------------------------------------------------------

def qualifies(maes, cfg: TrainConfig) -> bool:
    angle, speed = maes
    return angle < cfg.angle_tolerance and speed < cfg.speed_tolerance


def is_better_checkpoint(candidate, incumbent, cfg: TrainConfig) -> bool:
    """Whether ``candidate`` (angle MAE, speed MAE) should replace ``incumbent``.

    With no incumbent any candidate is taken, so a run always has a best
    checkpoint; its qualification is reported separately.
    """
    if incumbent is None:
        return True
    cand_ok, inc_ok = qualifies(candidate, cfg), qualifies(incumbent, cfg)
    if cand_ok and not inc_ok:
        return True
    if cand_ok and inc_ok:
        return candidate[0] + candidate[1] < incumbent[0] + incumbent[1]
    return False


# --- checkpoints -------------------------------------------------------------

@dataclass
class Checkpoint:
    spec: dict
    params: dict[str, np.ndarray]
    epoch: int
    val_angle_mae: float
    val_speed_mae: float
    rng_digest: str = ""
    qualified: bool = False
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: DrivingModel, epoch=0, maes=(math.inf, math.inf), rng_digest="",
                   qualified=False, extra=None) -> "Checkpoint":
        params = {name: p.data.copy() for name, p in model.named_parameters()}
        return cls(model.spec_dict(), params, epoch, float(maes[0]), float(maes[1]), rng_digest,
                   qualified, dict(extra or {}))

    def build_model(self) -> DrivingModel:
        model = model_from_spec(self.spec)
        expected = dict(model.named_parameters())
        if set(expected) != set(self.params):
            missing = sorted(set(expected) ^ set(self.params))
            raise CheckpointShapeError(f"checkpoint parameters do not match model spec: {missing[:5]}")
        for name, t in expected.items():
            arr = self.params[name]
            if arr.shape != t.shape:
                raise CheckpointShapeError(f"{name}: checkpoint shape {arr.shape}, model expects {t.shape}")
            t.data[...] = arr
        return model

    def digest(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name], dtype="<f8").tobytes())
        return h.hexdigest()


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Layout: magic, u32 version, u64 header length, JSON header, then every
    parameter as little-endian float64 in header order."""
    names = list(ckpt.params)
    header = {
        "spec": ckpt.spec,
        "epoch": ckpt.epoch,
        "val_angle_mae": ckpt.val_angle_mae,
        "val_speed_mae": ckpt.val_speed_mae,
        "rng_digest": ckpt.rng_digest,
        "qualified": ckpt.qualified,
        "extra": ckpt.extra,
        "params": [{"name": n, "shape": list(ckpt.params[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [CKPT_MAGIC, struct.pack("<IQ", CKPT_VERSION, len(blob)), blob]
    parts += [np.ascontiguousarray(ckpt.params[n], dtype="<f8").tobytes() for n in names]
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (magic {raw[:4]!r})")
    if len(raw) < 16:
        raise CheckpointTruncatedError(f"{path}: header truncated at {len(raw)} bytes")
    version, hlen = struct.unpack_from("<IQ", raw, 4)
    if version != CKPT_VERSION:
        raise CheckpointVersionError(f"{path}: checkpoint version {version}, this build reads {CKPT_VERSION}")
    if len(raw) < 16 + hlen:
        raise CheckpointTruncatedError(f"{path}: JSON header needs {hlen} bytes, file has {len(raw) - 16}")
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    offset = 16 + hlen
    params = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape, dtype=np.int64)) * 8
        if offset + n > len(raw):
            raise CheckpointTruncatedError(
                f"{path}: parameter {entry['name']} needs bytes {offset}..{offset + n}, file ends at {len(raw)}")
        params[entry["name"]] = np.frombuffer(raw, dtype="<f8", count=n // 8, offset=offset).astype(np.float64).reshape(shape)
        offset += n
    if offset != len(raw):
        raise CheckpointShapeError(f"{path}: {len(raw) - offset} bytes beyond the declared parameters")
    ckpt = Checkpoint(header["spec"], params, int(header["epoch"]), float(header["val_angle_mae"]),
                      float(header["val_speed_mae"]), header.get("rng_digest", ""),
                      bool(header.get("qualified", False)), header.get("extra", {}))
    ckpt.build_model()  # surfaces shape disagreement at load time
    return ckpt


# --- loop --------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_rmsd: float
    val_angle_mae: float
    val_speed_mae: float
    qualified: bool


@dataclass
class TrainResult:
    model: DrivingModel
    best: Checkpoint
    history: list[EpochRecord]


@dataclass
class SplitData:
    """Prepared model inputs and ``B x 2`` targets per split."""

    train: tuple[ModelInputs, np.ndarray]
    val: tuple[ModelInputs, np.ndarray] | None = None
    test: tuple[ModelInputs, np.ndarray] | None = None


def split_indices(n: int, fractions, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Seeded shuffle of ``range(n)`` cut into train/val/test by ``fractions``."""
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_val = min(n_val, n - n_train)
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]


def predict_array(model: DrivingModel, inputs: ModelInputs, batch_size: int = 64) -> np.ndarray:
    """``B x 2`` predictions without recording a tape."""
    outs = [model.forward(inputs.subset(slice(i, i + batch_size))).data
            for i in range(0, len(inputs), batch_size)]
    return np.concatenate(outs, axis=0)


def mean_abs_errors(pred: np.ndarray, truth: np.ndarray) -> tuple[float, float]:
    err = np.abs(pred - truth).mean(axis=0)
    return float(err[0]), float(err[1])


def dataset_rmsd(model, inputs, targets, angle_scale=1.0, batch_size=64) -> float:
    pred = predict_array(model, inputs, batch_size)
    return float(rmsd_loss(Tensor(pred), targets, angle_scale).data)


def _rng_digest(rng: np.random.Generator) -> str:
    state = json.dumps(rng.bit_generator.state, sort_keys=True, default=str)
    return hashlib.sha256(state.encode()).hexdigest()[:16]


def train(model: DrivingModel, data: SplitData, cfg: TrainConfig, extra: dict | None = None,
          max_steps: int | None = None) -> TrainResult:
    """Seeded minibatch Adam on the RMSD loss with per-epoch checkpoint selection.

    Validation MAEs come from ``data.val``, or from the training split when
    no validation split is given. ``max_steps`` stops early after that many
    optimizer updates (the epoch in progress still gets validated).
    """
    cfg.validate()
    inputs, targets = data.train
    if len(inputs) == 0:
        raise ContractError("empty training split")
    val_inputs, val_targets = data.val if data.val is not None and len(data.val[0]) else data.train

    params = model.parameters()
    opt = Adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng(cfg.seed)
    history: list[EpochRecord] = []
    best: Checkpoint | None = None
    best_maes = None
    steps = 0

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(inputs))
        total, seen = 0.0, 0
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            opt.zero_grad()
            with Tape() as tape:
                loss = rmsd_loss(model.forward(inputs.subset(idx)), targets[idx], cfg.angle_scale)
            value = float(loss.data)
            if not math.isfinite(value):
                norms = {n: float(np.linalg.norm(p.data)) for n, p in model.named_parameters()}
                raise TrainingError(f"non-finite loss {value} at epoch {epoch}, batch {b}; parameter norms: {norms}")
            backward(loss, tape)
            tape.clear()
            try:
                opt.step()
            except TrainingError as exc:
                raise TrainingError(f"epoch {epoch}, batch {b}: {exc}") from exc
            total += value * len(idx)
            seen += len(idx)
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break

        maes = mean_abs_errors(predict_array(model, val_inputs, cfg.eval_batch_size), val_targets)
        ok = qualifies(maes, cfg)
        history.append(EpochRecord(epoch, total / seen, maes[0], maes[1], ok))
        if is_better_checkpoint(maes, best_maes, cfg):
            best_maes = maes
            best = Checkpoint.from_model(model, epoch, maes, _rng_digest(rng), ok, extra)
        if max_steps is not None and steps >= max_steps:
            break

    return TrainResult(model, best, history)


def write_history_csv(history: list[EpochRecord], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_HEADER)
        for r in history:
            w.writerow([r.epoch, repr(r.train_rmsd), repr(r.val_angle_mae), repr(r.val_speed_mae), int(r.qualified)])
