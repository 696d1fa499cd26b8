"""Evaluation metrics: normalized best-so-far curves, predictive likelihood,
calibration (ECE and CDF uniformity), and performance profiles."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .bbob import BbobTask, evaluate
from .core import space_sample_uniform
from .gp import ZERO_MASS_SENTINEL as ZERO_DENSITY_SENTINEL

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NormalizationAnchors:
    """Reference scale for objective values.

    y_rand is the median value of random samples; y_max the known or
    best-found maximum.  y_max > y_rand for a well-posed task.
    """

    y_rand: float
    y_max: float


def best_so_far_curve(ys: Sequence[float], anchors: NormalizationAnchors) -> np.ndarray:
    """Running-max trajectory rescaled so y_rand -> 0 and y_max -> 1.

    Values above 1 mean the anchors are stale; they clamp with a warning.
    """
    if not anchors.y_max > anchors.y_rand:
        raise ValueError(f"degenerate anchors: y_max {anchors.y_max} <= y_rand {anchors.y_rand}")
    run = np.maximum.accumulate(np.asarray(ys, dtype=float))
    curve = (run - anchors.y_rand) / (anchors.y_max - anchors.y_rand)
    over = curve > 1.0
    if over.any():
        logger.warning("best-so-far exceeds y_max on %d trials; clamping to 1", int(over.sum()))
        curve = np.minimum(curve, 1.0)
    return curve


def estimate_y_rand(
    task: BbobTask, n_samples: int = 10000, rng: np.random.Generator | None = None
) -> float:
    """Median objective of uniform random samples (robust to heavy tails)."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    r = np.random.default_rng(rng)
    ys = [evaluate(task, space_sample_uniform(task.space, r), r) for _ in range(n_samples)]
    return float(np.median(ys))


@dataclass(frozen=True)
class LikelihoodSummary:
    mean: float
    stderr: float
    n_zero_density: int
    n_total: int


def log_pred_likelihood(
    predictor: Callable[[object, Sequence], object],
    heldout_groups: Sequence[Sequence[tuple]],
) -> LikelihoodSummary:
    """Mean log predictive density over held-out (context, x, y) triples.

    Groups correspond to functions; the standard error is the 1-std error of
    the per-group means.  A zero-density outcome contributes the sentinel
    value instead of -inf and is counted.
    """
    group_means: list[float] = []
    zero = 0
    total = 0
    for group in heldout_groups:
        vals: list[float] = []
        for context, x, y in group:
            density = predictor(context, x).pdf(y)
            total += 1
            if density <= 0.0:
                zero += 1
                vals.append(ZERO_DENSITY_SENTINEL)
            else:
                vals.append(math.log(density))
        if vals:
            group_means.append(float(np.mean(vals)))
    if not group_means:
        raise ValueError("no held-out samples")
    g = len(group_means)
    stderr = float(np.std(group_means, ddof=1) / math.sqrt(g)) if g > 1 else 0.0
    return LikelihoodSummary(
        mean=float(np.mean(group_means)), stderr=stderr, n_zero_density=zero, n_total=total
    )


def ece(
    pred_dists: Sequence,
    outcomes: Sequence[float],
    value_bins: int = 100,
    conf_bins: int = 10,
) -> float:
    """Expected calibration error, in percent.

    Each prediction becomes a value_bins-class problem over its own support;
    the predicted class is the argmax interval and its probability the
    confidence.  Predictions are pooled into conf_bins equal-width confidence
    bins and ECE = sum(bin weight * |accuracy - confidence|) * 100.
    """
    n = len(pred_dists)
    if n == 0:
        raise ValueError("no predictions")
    if len(outcomes) != n:
        raise ValueError("outcomes must align with predictions")
    conf = np.empty(n)
    correct = np.empty(n, dtype=bool)
    for i, (dist, y) in enumerate(zip(pred_dists, outcomes)):
        lo, hi = dist.support
        if not (lo <= y <= hi):
            raise ValueError(f"outcome {y} outside prediction support [{lo}, {hi}]")
        edges = np.linspace(lo, hi, value_bins + 1)
        probs = np.diff(dist.cdf_batch(edges))
        k = int(np.argmax(probs))
        conf[i] = probs[k]
        true_k = min(int((y - lo) / (hi - lo) * value_bins), value_bins - 1)
        correct[i] = true_k == k
    which = np.minimum((conf * conf_bins).astype(int), conf_bins - 1)
    total = 0.0
    for b in range(conf_bins):
        m = which == b
        if m.any():
            total += m.mean() * abs(correct[m].mean() - conf[m].mean())
    return 100.0 * total


@dataclass(frozen=True)
class CalibrationReport:
    """ECE plus the probability-integral-transform picture of calibration."""

    ece: float
    cdf_values: np.ndarray
    grid: np.ndarray
    cumulative: np.ndarray
    sup_deviation: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.ece <= 100.0:
            raise ValueError("ece must lie in [0, 100]")
        f = np.asarray(self.cdf_values, dtype=float)
        if f.size and ((f < 0.0).any() or (f > 1.0).any()):
            raise ValueError("cdf values must lie in [0, 1]")


def calibration_cdf(
    pred_dists: Sequence, outcomes: Sequence[float], grid_points: int = 101
) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """F_i(y_i) values, their empirical CDF on a fixed grid, and the sup
    deviation from the diagonal.  Perfectly calibrated predictions give
    uniform F values and near-zero deviation."""
    if len(pred_dists) != len(outcomes):
        raise ValueError("outcomes must align with predictions")
    f = np.array([d.cdf(y) for d, y in zip(pred_dists, outcomes)])
    grid = np.linspace(0.0, 1.0, grid_points)
    if f.size == 0:
        return f, grid, np.zeros(0), 0.0
    cumulative = np.searchsorted(np.sort(f), grid, side="right") / f.size
    sup = float(np.abs(cumulative - grid).max())
    return f, grid, cumulative, sup


def calibration_report(
    pred_dists: Sequence,
    outcomes: Sequence[float],
    value_bins: int = 100,
    conf_bins: int = 10,
    grid_points: int = 101,
) -> CalibrationReport:
    f, grid, cumulative, sup = calibration_cdf(pred_dists, outcomes, grid_points)
    return CalibrationReport(
        ece=ece(pred_dists, outcomes, value_bins, conf_bins),
        cdf_values=f,
        grid=grid,
        cumulative=cumulative,
        sup_deviation=sup,
    )


def performance_profile(
    results: Mapping[str, Sequence[Sequence[float]]],
    threshold_rule: str | Callable[[Sequence[float]], float] = "best90",
    anchor_trial: int = 50,
) -> dict[str, np.ndarray]:
    """Fraction of tasks solved by each method at every trial index.

    A task's threshold comes from all methods' best-so-far values at
    anchor_trial: "best90" takes 90% of the best, "median" the median, or
    pass a callable over those values.  Success at trial t means the method's
    curve reaches the threshold by t.
    """
    methods = list(results)
    if not methods:
        raise ValueError("no methods")
    n_tasks = len(results[methods[0]])
    for m in methods:
        if len(results[m]) != n_tasks:
            raise ValueError("methods must cover the same task set")
    if n_tasks == 0:
        raise ValueError("no tasks")

    curves = {m: [np.asarray(c, dtype=float) for c in results[m]] for m in methods}
    horizon = len(curves[methods[0]][0])
    for m in methods:
        for c in curves[m]:
            if len(c) != horizon:
                raise ValueError("all curves must share one trial horizon")

    idx = min(anchor_trial, horizon) - 1
    thresholds = np.empty(n_tasks)
    for j in range(n_tasks):
        finals = [curves[m][j][idx] for m in methods]
        if callable(threshold_rule):
            thresholds[j] = float(threshold_rule(finals))
        elif threshold_rule == "best90":
            thresholds[j] = 0.9 * max(finals)
        elif threshold_rule == "median":
            thresholds[j] = float(np.median(finals))
        else:
            raise ValueError(f"unknown threshold rule {threshold_rule!r}")

    out: dict[str, np.ndarray] = {}
    for m in methods:
        hits = np.stack([curves[m][j] >= thresholds[j] for j in range(n_tasks)])
        out[m] = hits.mean(axis=0)
    return out


def write_metric_table(path: str, curves: Sequence[Sequence[float]]) -> None:
    """Tab-separated (trial, mean, std) rows across runs; fixed formatting so
    reruns are byte-identical."""
    arr = np.asarray(curves, dtype=float)
    if arr.ndim != 2:
        raise ValueError("expected a [runs, trials] array")
    mean = arr.mean(axis=0)
    std = arr.std(axis=0)
    with open(path, "w") as fh:
        fh.write("trial\tmean\tstd\n")
        for t in range(arr.shape[1]):
            fh.write(f"{t}\t{mean[t]:.17g}\t{std[t]:.17g}\n")
