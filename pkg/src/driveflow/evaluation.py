"""Threshold accuracy, accuracy curves, Gaussian perplexity, and discrete actions."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data.dataset import DrivingBehavior
from .errors import ContractError

CURVE_HEADER = ["threshold", "accuracy", "target", "model"]
DEFAULT_THRESHOLDS = tuple(float(t) for t in np.arange(0.5, 15.01, 0.5))


def _aligned(preds, truths) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(preds, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    if p.shape != t.shape:
        raise ContractError(f"predictions {p.shape} and truths {t.shape} differ in length")
    if p.shape[0] == 0:
        raise ContractError("no predictions to evaluate")
    return p, t


def threshold_accuracy(preds, truths, tol: float) -> float:
    """Fraction of samples with ``|pred - truth| < tol``."""
    if not tol > 0:
        raise ContractError(f"tolerance must be positive, got {tol}")
    p, t = _aligned(preds, truths)
    return int(np.count_nonzero(np.abs(p - t) < tol)) / p.shape[0]


@dataclass(frozen=True)
class AccuracyCurve:
    thresholds: tuple[float, ...]
    accuracy: tuple[float, ...]
    target: str
    model: str = ""

    def at(self, threshold: float) -> float:
        return self.accuracy[self.thresholds.index(threshold)]


def accuracy_curve(preds, truths, thresholds: Sequence[float], target: str = "angle", model: str = "") -> AccuracyCurve:
    ths = [float(x) for x in thresholds]
    if not ths or any(x <= 0 for x in ths) or any(b <= a for a, b in zip(ths, ths[1:])):
        raise ContractError("thresholds must be positive and strictly ascending")
    p, t = _aligned(preds, truths)
    # one sort instead of a recount per threshold
    err = np.sort(np.abs(p - t))
    counts = np.searchsorted(err, ths, side="left")
    return AccuracyCurve(tuple(ths), tuple(int(c) / p.shape[0] for c in counts), target, model)


def write_curves_csv(curves: Sequence[AccuracyCurve], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_HEADER)
        for c in curves:
            for th, acc in zip(c.thresholds, c.accuracy):
                w.writerow([repr(th), repr(acc), c.target, c.model])


# --- perplexity --------------------------------------------------------------

@dataclass(frozen=True)
class PerplexityReport:
    angle: float
    speed: float
    combined: float
    sigma: tuple[float, float]
    count: int


def gaussian_perplexity(preds, truths, sigma: float) -> float:
    """``exp`` of the mean negative log-density of each truth under N(pred, sigma^2)."""
    if not sigma > 0:
        raise ContractError(f"sigma must be positive, got {sigma}")
    p, t = _aligned(preds, truths)
    nll = 0.5 * ((t - p) / sigma) ** 2 + math.log(sigma) + 0.5 * math.log(2 * math.pi)
    return float(np.exp(np.mean(nll)))


def perplexity(preds, truths, sigma=(0.1, 0.1)) -> PerplexityReport:
    """Per-target perplexity for ``T x 2`` (angle, speed) arrays; combined is their geometric mean."""
    p, t = _aligned(preds, truths)
    p, t = p.reshape(-1, 2), t.reshape(-1, 2)
    s_angle, s_speed = (sigma, sigma) if np.isscalar(sigma) else sigma
    a = gaussian_perplexity(p[:, 0], t[:, 0], s_angle)
    s = gaussian_perplexity(p[:, 1], t[:, 1], s_speed)
    return PerplexityReport(a, s, math.sqrt(a * s), (float(s_angle), float(s_speed)), p.shape[0])


# --- discrete actions --------------------------------------------------------

class ActionClass(str, enum.Enum):
    STRAIGHT = "straight"
    STOP = "stop"
    TURN_LEFT = "turn_left"
    TURN_RIGHT = "turn_right"


def discretize_action(behavior, angle_cut: float, stop_cut: float) -> ActionClass:
    """Stop below ``stop_cut`` speed, else turn when ``|angle|`` strictly exceeds ``angle_cut``."""
    if not (angle_cut > 0 and stop_cut > 0):
        raise ContractError("cuts must be positive")
    if behavior.speed < stop_cut:
        return ActionClass.STOP
    if behavior.angle > angle_cut:
        return ActionClass.TURN_LEFT
    if behavior.angle < -angle_cut:
        return ActionClass.TURN_RIGHT
    return ActionClass.STRAIGHT


def classification_accuracy(preds, truths, angle_cut: float, stop_cut: float) -> float:
    if len(preds) != len(truths):
        raise ContractError(f"{len(preds)} predictions vs {len(truths)} truths")
    if not preds:
        raise ContractError("no behaviors to classify")
    hits = sum(discretize_action(p, angle_cut, stop_cut) == discretize_action(t, angle_cut, stop_cut)
               for p, t in zip(preds, truths))
    return hits / len(preds)


# --- report ------------------------------------------------------------------

@dataclass
class EvaluationReport:
    count: int
    report_threshold: float
    angle_accuracy: float
    speed_accuracy: float
    perplexity: PerplexityReport
    classification_accuracy: float
    angle_mae_deg: float
    speed_mae_kmh: float
    curves: tuple[AccuracyCurve, AccuracyCurve]

    def lines(self) -> list[str]:
        return [
            f"count={self.count}",
            f"report_threshold={self.report_threshold!r}",
            f"angle_accuracy={self.angle_accuracy!r}",
            f"speed_accuracy={self.speed_accuracy!r}",
            f"angle_mae_deg={self.angle_mae_deg!r}",
            f"speed_mae_kmh={self.speed_mae_kmh!r}",
            f"perplexity_angle={self.perplexity.angle!r}",
            f"perplexity_speed={self.perplexity.speed!r}",
            f"perplexity_combined={self.perplexity.combined!r}",
            f"classification_accuracy={self.classification_accuracy!r}",
        ]


def _behaviors(angles, speeds) -> list[DrivingBehavior]:
    return [DrivingBehavior(float(a), float(s)) for a, s in zip(angles, speeds)]


def evaluate(pred: np.ndarray, truth: np.ndarray, max_speed_kmh: float, model: str = "",
             thresholds=DEFAULT_THRESHOLDS, report_threshold: float = 5.0,
             sigma=(0.1, 0.1), angle_cut: float = math.radians(2.0), stop_cut_kmh: float = 5.0) -> EvaluationReport:
    """Score ``B x 2`` (angle rad, normalized speed) predictions.

    Accuracy thresholds are in degrees for angle and km/h for speed;
    perplexity uses internal units (radians, normalized speed).
    """
    pred, truth = _aligned(pred, truth)
    a_pred, a_true = np.degrees(pred[:, 0]), np.degrees(truth[:, 0])
    s_pred, s_true = pred[:, 1] * max_speed_kmh, truth[:, 1] * max_speed_kmh
    curves = (accuracy_curve(a_pred, a_true, thresholds, "angle", model),
              accuracy_curve(s_pred, s_true, thresholds, "speed", model))
    return EvaluationReport(
        count=pred.shape[0],
        report_threshold=report_threshold,
        angle_accuracy=threshold_accuracy(a_pred, a_true, report_threshold),
        speed_accuracy=threshold_accuracy(s_pred, s_true, report_threshold),
        perplexity=perplexity(pred, truth, sigma),
        classification_accuracy=classification_accuracy(
            _behaviors(pred[:, 0], s_pred), _behaviors(truth[:, 0], s_true), angle_cut, stop_cut_kmh),
        angle_mae_deg=float(np.mean(np.abs(a_pred - a_true))),
        speed_mae_kmh=float(np.mean(np.abs(s_pred - s_true))),
        curves=curves,
    )
