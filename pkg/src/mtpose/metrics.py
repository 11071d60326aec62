"""Pose and action evaluation metrics, plus the CSV report shape used by the CLI."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

AUC_STEPS = 50


def _joint_errors(pred, gt, valid=None) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"pred {pred.shape} and gt {gt.shape} differ in shape")
    if pred.ndim < 2:
        raise ValueError("poses must be at least [N_J, D]")
    valid = np.ones(pred.shape[:-1], bool) if valid is None else np.broadcast_to(np.asarray(valid, bool), pred.shape[:-1])
    if not valid.any():
        raise ValueError("no valid joints to evaluate")
    # invalid joints may hold NaN targets; never read them
    diff = np.where(valid[..., None], pred - np.where(valid[..., None], gt, 0.0), 0.0)
    return np.sqrt((diff**2).sum(-1)), valid


def pckh(pred, gt, head_sizes, threshold: float, valid=None) -> float:
    """Percentage of valid joints whose error is at most ``threshold * head_size``.

    ``pred``/``gt`` are [N, J, D] and ``head_sizes`` is [N] in the same units.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    err, valid = _joint_errors(pred, gt, valid)
    heads = np.asarray(head_sizes, dtype=np.float64).reshape((-1,) + (1,) * (err.ndim - 1))
    hit = (err <= threshold * heads) & valid
    return 100.0 * hit.sum() / valid.sum()


def pckh_curve(pred, gt, head_sizes, thresholds, valid=None) -> np.ndarray:
    err, valid = _joint_errors(pred, gt, valid)
    heads = np.asarray(head_sizes, dtype=np.float64).reshape((-1,) + (1,) * (err.ndim - 1))
    rel = err / heads
    n = valid.sum()
    return np.array([100.0 * ((rel <= t) & valid).sum() / n for t in thresholds])


def pckh_auc(pred, gt, head_sizes, max_threshold: float = 0.5, valid=None, steps: int = AUC_STEPS) -> float:
    """Trapezoidal area under PCKh(t) for t in [0, max_threshold], divided by max_threshold."""
    if max_threshold <= 0:
        raise ValueError("max_threshold must be positive")
    ts = np.linspace(0.0, max_threshold, steps + 1)
    curve = pckh_curve(pred, gt, head_sizes, ts, valid)
    return float(np.trapezoid(curve, ts) / max_threshold)


def mpjpe(pred, gt, valid=None) -> float:
    """Mean Euclidean joint error over valid joints, in the units supplied."""
    err, valid = _joint_errors(pred, gt, valid)
    return float(err[valid].mean())


def per_joint_mpjpe(pred, gt, valid=None) -> np.ndarray:
    """[J] mean error per joint; NaN for joints never valid."""
    err, valid = _joint_errors(pred, gt, valid)
    err = err.reshape(-1, err.shape[-1])
    valid = valid.reshape(-1, valid.shape[-1])
    counts = valid.sum(0)
    sums = np.where(valid, err, 0.0).sum(0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)


def accuracy(preds, labels) -> float:
    preds = np.asarray(preds).ravel()
    labels = np.asarray(labels).ravel()
    if preds.size == 0:
        raise ValueError("accuracy of an empty set")
    if preds.shape != labels.shape:
        raise ValueError(f"{preds.size} predictions for {labels.size} labels")
    return 100.0 * float((preds == labels).sum()) / preds.size


@dataclass
class EvalReport:
    """One metric with an optional per-joint or per-class breakdown."""

    metric: str
    value: float
    count: int
    breakdown: dict[str, float] = field(default_factory=dict)

    def rows(self) -> list[list[str]]:
        out = [[self.metric, "all", _fmt(self.value), str(self.count)]]
        out += [[self.metric, k, _fmt(v), ""] for k, v in self.breakdown.items()]
        return out


def _fmt(v: float) -> str:
    return "nan" if not np.isfinite(v) else f"{v:.6f}"


def reports_to_csv(reports: list[EvalReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "scope", "value", "count"])
    for r in reports:
        w.writerows(r.rows())
    return buf.getvalue()


def rows_to_csv(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()
