"""Decode model token distributions into parameter and objective predictions.

The model emits a categorical over the whole vocabulary at every position;
everything here restricts that to the valid value bins and maps bins back
onto real search-space coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .core import (
    Metadata,
    ParamKind,
    ParameterConfig,
    ParamValue,
    Scale,
    Trial,
    denormalize_param,
    set_value,
)
from .model import SeqModel
from .tokenizer import (
    INFERENCE_AFFINE,
    Vocab,
    YAffine,
    _trial_value_bins,
    effective_y_range,
    quantize_y,
    serialize_history,
    serialize_metadata,
)

_VOCAB = Vocab()

# Temperature presets for the objective head.  1.0 is the default; the softer
# values help calibration on noisier corpora and are selected per dataset.
FUNCTION_TEMPERATURE_PRESETS = (1.0, 1.1, 1.5)


@dataclass(frozen=True)
class InferenceConfig:
    """Knobs that are fixed for a whole inference session.

    ``y_affine`` must match the affine used when serializing observed
    objective values, otherwise predicted bins land on the wrong scale.
    """

    y_affine: YAffine = INFERENCE_AFFINE
    function_temperature: float = 1.0
    param_temperature: float = 1.0

    def __post_init__(self) -> None:
        if self.function_temperature <= 0.0:
            raise ValueError("function_temperature must be positive")
        if self.param_temperature <= 0.0:
            raise ValueError("param_temperature must be positive")


def _inverse_cdf_draw(probs: np.ndarray, rng: np.random.Generator) -> int:
    cum = np.cumsum(probs)
    i = int(np.searchsorted(cum, rng.random(), side="right"))
    return min(i, len(probs) - 1)


@dataclass(frozen=True)
class PiecewiseConstDist:
    """Histogram density on [lo, hi], piecewise constant in log(x) when log_scale.

    ``bin_probs`` must sum to 1 within 1e-9.  pdf/cdf/sample all speak
    original x units; log_scale only changes which coordinate the bins tile
    evenly.
    """

    support: tuple[float, float]
    bin_probs: np.ndarray
    log_scale: bool = False

    def __post_init__(self) -> None:
        lo, hi = self.support
        p = np.asarray(self.bin_probs, dtype=float)
        object.__setattr__(self, "bin_probs", p)
        if not hi > lo:
            raise ValueError(f"support [{lo}, {hi}] must have positive width")
        if self.log_scale and lo <= 0.0:
            raise ValueError("log_scale support must be strictly positive")
        if p.ndim != 1 or p.size == 0:
            raise ValueError("bin_probs must be a non-empty vector")
        if (p < 0.0).any() or abs(float(p.sum()) - 1.0) > 1e-9:
            raise ValueError("bin_probs must be non-negative and sum to 1")
        object.__setattr__(self, "_cum", np.concatenate([[0.0], np.cumsum(p)]))

    @property
    def nbins(self) -> int:
        return len(self.bin_probs)

    def _zrange(self) -> tuple[float, float]:
        lo, hi = self.support
        if self.log_scale:
            return (math.log(lo), math.log(hi))
        return (float(lo), float(hi))

    def bin_edges(self) -> np.ndarray:
        """nbins + 1 edges in original units, exact at both endpoints."""
        zlo, zhi = self._zrange()
        z = np.linspace(zlo, zhi, self.nbins + 1)
        e = np.exp(z) if self.log_scale else z
        e[0], e[-1] = self.support
        return e

    def bin_of(self, x: float) -> int:
        lo, hi = self.support
        if not (lo <= x <= hi):
            raise ValueError(f"x={x} outside support [{lo}, {hi}]")
        zlo, zhi = self._zrange()
        z = math.log(x) if self.log_scale else float(x)
        return min(int((z - zlo) / (zhi - zlo) * self.nbins), self.nbins - 1)

    def pdf(self, x: float) -> float:
        lo, hi = self.support
        if not (lo <= x <= hi):
            return 0.0
        zlo, zhi = self._zrange()
        dens = self.bin_probs[self.bin_of(x)] * self.nbins / (zhi - zlo)
        # constant in z; the log-scale change of variable costs a 1/x factor
        return dens / float(x) if self.log_scale else float(dens)

    def cdf(self, x: float) -> float:
        lo, hi = self.support
        if x <= lo:
            return 0.0
        if x >= hi:
            return 1.0
        zlo, zhi = self._zrange()
        z = math.log(x) if self.log_scale else float(x)
        w = (zhi - zlo) / self.nbins
        i = self.bin_of(x)
        head = float(self._cum[i])
        return min(1.0, head + float(self.bin_probs[i]) * (z - (zlo + i * w)) / w)

    def cdf_batch(self, xs) -> np.ndarray:
        """cdf over an array of points; same closed form, vectorized."""
        x = np.asarray(xs, dtype=float)
        lo, hi = self.support
        zlo, zhi = self._zrange()
        inside = (x > lo) & (x < hi)
        z = np.log(x, where=inside, out=np.zeros_like(x)) if self.log_scale else x
        w = (zhi - zlo) / self.nbins
        i = np.clip((z - zlo) / w, 0, self.nbins - 1).astype(int)
        c = self._cum[i] + self.bin_probs[i] * (z - (zlo + i * w)) / w
        out = np.where(x <= lo, 0.0, np.where(x >= hi, 1.0, np.minimum(c, 1.0)))
        return out

    def sample(self, rng: np.random.Generator) -> float:
        zlo, zhi = self._zrange()
        u = rng.random()
        b = min(int(np.searchsorted(self._cum[1:], u, side="right")), self.nbins - 1)
        z = zlo + (b + rng.random()) * (zhi - zlo) / self.nbins
        x = math.exp(z) if self.log_scale else z
        lo, hi = self.support
        return min(max(x, lo), hi)


@dataclass(frozen=True)
class CategoricalDist:
    """Probabilities over an explicit value set."""

    values: tuple[ParamValue, ...]
    probs: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "probs", p)
        if len(self.values) == 0 or p.shape != (len(self.values),):
            raise ValueError("probs must align one-to-one with values")
        if (p < 0.0).any() or abs(float(p.sum()) - 1.0) > 1e-9:
            raise ValueError("probs must be non-negative and sum to 1")

    def prob_of(self, value: ParamValue) -> float:
        if value not in self.values:
            raise ValueError(f"value {value!r} not in the set")
        return float(self.probs[self.values.index(value)])

    def sample(self, rng: np.random.Generator) -> ParamValue:
        return self.values[_inverse_cdf_draw(self.probs, rng)]


ParamDist = Union[PiecewiseConstDist, CategoricalDist]


def truncate_and_renormalize(dist: np.ndarray, valid: Sequence[int]) -> np.ndarray:
    """Zero everything outside ``valid`` and rescale to unit mass.

    A distribution with no mass on the valid ids becomes uniform over them.
    """
    d = np.asarray(dist, dtype=float)
    idx = np.asarray(valid, dtype=int)
    if idx.size == 0:
        raise ValueError("valid index set is empty")
    out = np.zeros_like(d)
    mass = float(d[idx].sum())
    if mass > 0.0:
        out[idx] = d[idx] / mass
    else:
        out[idx] = 1.0 / idx.size
    return out


def decode_param_dist(
    vocab_probs: np.ndarray, cfg: ParameterConfig, vocab: Vocab | None = None
) -> ParamDist:
    """Token distribution at one x position -> distribution over the parameter.

    Numeric kinds become a Q-bin histogram over [min, max], tiled in log
    space for LOG scale; set kinds keep the first set_size index bins.  Mass
    on any other token is discarded and the remainder renormalized.
    """
    v = vocab or _VOCAB
    p = np.asarray(vocab_probs, dtype=float)
    if p.shape != (v.size,):
        raise ValueError(f"expected a length-{v.size} vocabulary distribution")
    if cfg.kind in (ParamKind.DOUBLE, ParamKind.INTEGER):
        if cfg.max_value == cfg.min_value:
            raise ValueError(f"{cfg.name}: zero-width range has no density")
        bins = truncate_and_renormalize(p, np.arange(v.Q))[: v.Q]
        return PiecewiseConstDist(
            (float(cfg.min_value), float(cfg.max_value)),
            bins,
            log_scale=cfg.scale is Scale.LOG,
        )
    n = cfg.set_size
    probs = truncate_and_renormalize(p, np.arange(n))[:n]
    return CategoricalDist(tuple(set_value(i, cfg) for i in range(n)), probs)


def function_support(y_range: tuple[float, float], affine: YAffine) -> tuple[float, float]:
    """Objective interval that the Q y-bins tile, under the serialization affine."""
    y_min, y_max = y_range
    if y_max <= y_min:
        # all observations identical: bins carry no scale, give them unit width
        return (float(y_min), float(y_min) + 1.0)
    return effective_y_range((float(y_min), float(y_max)), affine)


def _softmax(logits, temperature: float) -> np.ndarray:
    z = np.asarray(logits, dtype=float) / temperature
    z -= z.max()
    e = np.exp(z)
    return e / e.sum()


class SuggestSession:
    """Incremental decoding over one study.

    Keeps a KV cache aligned with the serialized history so suggest() and
    predict_function_dist() cost O(tokens fed), not O(whole prefix).
    Speculative tokens (sampled x values, prediction queries) are rolled back
    by cache truncation.  Growing the observed objective range changes the
    meaning of earlier y bins, so those observes rebuild the decoder state.
    """

    def __init__(
        self,
        model: SeqModel,
        metadata: Metadata,
        config: InferenceConfig | None = None,
        vocab: Vocab | None = None,
        seed: int | np.random.Generator | None = None,
    ) -> None:
        self.model = model
        self.metadata = metadata
        self.space = metadata.space
        self.config = config or InferenceConfig()
        self.vocab = vocab or _VOCAB
        if self.vocab.size != model.cfg.vocab_size:
            raise ValueError(
                f"vocab size {self.vocab.size} != model vocab {model.cfg.vocab_size}"
            )
        self.rng = np.random.default_rng(seed)
        self.trials: list[Trial] = []
        self._y_range: tuple[float, float] | None = None
        self._meta_tokens = serialize_metadata(metadata)
        self._cache = model.start_cache(self._meta_tokens)
        self._base_len = self._cache.length
        self._base_logits = self._cache.last_logits

    @property
    def y_range(self) -> tuple[float, float] | None:
        return self._y_range

    def observe(self, x: Sequence[ParamValue], y: float) -> None:
        """Append one completed trial to the conditioning history."""
        trial = Trial(x=tuple(x), y=float(y))
        if self._y_range is None:
            new_range = (trial.y, trial.y)
        else:
            new_range = (min(self._y_range[0], trial.y), max(self._y_range[1], trial.y))
        affine = self.config.y_affine
        if new_range != self._y_range:
            # earlier y tokens shift under the new range: reserialize everything
            toks = serialize_history(
                self.trials + [trial], self.space, new_range, affine, vocab=self.vocab
            )
            if 1 + len(toks) > self.model.cfg.max_history_len + 1:
                raise ValueError("history exceeds the model's token budget")
            self._cache.truncate(1)
            logits = self.model.extend_cache(self._cache, toks)
        else:
            toks = [self.vocab.pipe] + serialize_history(
                [trial], self.space, new_range, affine, vocab=self.vocab
            )
            logits = self.model.extend_cache(self._cache, toks)
        self.trials.append(trial)
        self._y_range = new_range
        self._base_len = self._cache.length
        self._base_logits = logits

    def suggest(self) -> tuple[ParamValue, ...]:
        """Sample one configuration from the policy head.

        Numeric parameters draw a bin and then a uniform offset within it;
        INTEGER rounding happens in denormalization.  The sampled tokens are
        speculative and rolled back before returning.
        """
        v = self.vocab
        temp = self.config.param_temperature
        try:
            logits = self._base_logits
            if self.trials:
                logits = self.model.extend_cache(self._cache, [v.pipe])
            xs: list[ParamValue] = []
            for d, cfg in enumerate(self.space.parameters):
                probs = _softmax(logits, temp)
                if cfg.kind in (ParamKind.DOUBLE, ParamKind.INTEGER):
                    bins = truncate_and_renormalize(probs, np.arange(v.Q))[: v.Q]
                    b = _inverse_cdf_draw(bins, self.rng)
                    u = (b + self.rng.random()) / v.Q
                    xs.append(denormalize_param(u, cfg))
                else:
                    n = cfg.set_size
                    sel = truncate_and_renormalize(probs, np.arange(n))[:n]
                    b = _inverse_cdf_draw(sel, self.rng)
                    xs.append(set_value(b, cfg))
                if d + 1 < self.space.dimension:
                    logits = self.model.extend_cache(self._cache, [v.value_token(b)])
            return tuple(xs)
        finally:
            self._cache.truncate(self._base_len)

    def next_param_bins(self) -> np.ndarray:
        """Value-token distribution for the first parameter of the next
        suggestion (length Q for numeric kinds, set size otherwise)."""
        v = self.vocab
        try:
            logits = self._base_logits
            if self.trials:
                logits = self.model.extend_cache(self._cache, [v.pipe])
            probs = _softmax(logits, self.config.param_temperature)
            cfg = self.space.parameters[0]
            n = v.Q if cfg.kind in (ParamKind.DOUBLE, ParamKind.INTEGER) else cfg.set_size
            return truncate_and_renormalize(probs, np.arange(n))[:n]
        finally:
            self._cache.truncate(self._base_len)

    def predict_function_bins(
        self, x: Sequence[ParamValue], temperature: float | None = None
    ) -> np.ndarray:
        """P(y bin | history, x) as a length-Q vector, temperature applied to logits."""
        if not self.trials:
            raise ValueError("no observations to anchor the objective scale")
        t = self.config.function_temperature if temperature is None else float(temperature)
        if t <= 0.0:
            raise ValueError("temperature must be positive")
        v = self.vocab
        xbins = _trial_value_bins(
            Trial(x=tuple(x), y=0.0), self.space, list(range(self.space.dimension)), v.Q
        )
        toks = [v.pipe] + [v.value_token(b) for b in xbins] + [v.star]
        try:
            logits = self.model.extend_cache(self._cache, toks)
        finally:
            self._cache.truncate(self._base_len)
        return truncate_and_renormalize(_softmax(logits, t), np.arange(v.Q))[: v.Q]

    def predict_function_dist(
        self, x: Sequence[ParamValue], temperature: float | None = None
    ) -> PiecewiseConstDist:
        """Distribution over the objective at x, on the dequantized scale."""
        bins = self.predict_function_bins(x, temperature)
        return PiecewiseConstDist(
            function_support(self._y_range, self.config.y_affine), bins
        )

    def y_star_bin(self) -> int:
        """Bin of the best (largest) observed objective under the current range."""
        if not self.trials:
            raise ValueError("no observations")
        best = max(t.y for t in self.trials)
        return quantize_y(best, self._y_range, self.config.y_affine, self.vocab.Q)


def prior_suggest(
    model: SeqModel,
    metadata: Metadata,
    history: Sequence[Trial],
    seed: int | np.random.Generator | None = None,
    config: InferenceConfig | None = None,
) -> tuple[ParamValue, ...]:
    """One-shot suggestion conditioned on a trial history."""
    s = SuggestSession(model, metadata, config=config, seed=seed)
    for t in history:
        s.observe(t.x, t.y)
    return s.suggest()


def predict_function_dist(
    model: SeqModel,
    metadata: Metadata,
    history: Sequence[Trial],
    x: Sequence[ParamValue],
    config: InferenceConfig | None = None,
    temperature: float | None = None,
) -> PiecewiseConstDist:
    """One-shot objective prediction at x, conditioned on a trial history."""
    s = SuggestSession(model, metadata, config=config)
    for t in history:
        s.observe(t.x, t.y)
    return s.predict_function_dist(x, temperature)
