"""Acquisition scoring over predicted objective-bin distributions.

Scores operate directly on bin indices; the argmax over candidates is
invariant to the affine relation between bins and raw objective values.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import ParamValue
from .decode import SuggestSession, _inverse_cdf_draw


class AcqKind(enum.Enum):
    EXPECTED_IMPROVEMENT = "ei"
    PROB_IMPROVEMENT = "pi"
    UPPER_CONFIDENCE = "ucb"
    THOMPSON = "ts"


@dataclass(frozen=True)
class AcquisitionSpec:
    kind: AcqKind = AcqKind.EXPECTED_IMPROVEMENT
    ucb_quantile: float = 0.9
    n_candidates: int = 100

    def __post_init__(self) -> None:
        if not 0.0 < self.ucb_quantile < 1.0:
            raise ValueError("ucb_quantile must lie in (0, 1)")
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be positive")


def score(
    bin_probs: np.ndarray,
    spec: AcquisitionSpec,
    y_star_bin: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """One acquisition value for a predicted bin distribution.

    EI and PI need the incumbent bin; UCB is the smallest bin whose CDF
    reaches the quantile; Thompson is a single sampled bin and needs ``rng``.
    """
    p = np.asarray(bin_probs, dtype=float)
    if spec.kind in (AcqKind.EXPECTED_IMPROVEMENT, AcqKind.PROB_IMPROVEMENT):
        if y_star_bin is None:
            raise ValueError(f"{spec.kind.value} needs the incumbent bin")
        if spec.kind is AcqKind.EXPECTED_IMPROVEMENT:
            gain = np.maximum(np.arange(len(p)) - y_star_bin, 0)
            return float(p @ gain)
        return float(p[y_star_bin + 1 :].sum())
    if spec.kind is AcqKind.UPPER_CONFIDENCE:
        cum = np.cumsum(p)
        b = int(np.searchsorted(cum, spec.ucb_quantile, side="left"))
        return float(min(b, len(p) - 1))
    if rng is None:
        raise ValueError("Thompson sampling needs an rng")
    return float(_inverse_cdf_draw(p, rng))


def augmented_suggest(
    prior_sampler: Callable[[], tuple[ParamValue, ...]],
    predictor: Optional[Callable[[Sequence[ParamValue]], np.ndarray]],
    spec: AcquisitionSpec,
    rng: np.random.Generator | None = None,
    y_star_bin: int | None = None,
) -> tuple[ParamValue, ...]:
    """Best of n_candidates prior draws under the acquisition score.

    Ties keep the earliest candidate.  Without a predictor (nothing observed
    yet) this degenerates to a single prior draw.
    """
    if predictor is None:
        return prior_sampler()
    cands = [prior_sampler() for _ in range(spec.n_candidates)]
    scores = [score(predictor(x), spec, y_star_bin, rng) for x in cands]
    return cands[int(np.argmax(scores))]


def suggest_with_acquisition(
    session: SuggestSession, spec: AcquisitionSpec
) -> tuple[ParamValue, ...]:
    """Acquisition-reranked suggestion from a live session."""
    if not session.trials:
        return session.suggest()
    return augmented_suggest(
        session.suggest,
        session.predict_function_bins,
        spec,
        session.rng,
        session.y_star_bin(),
    )
