"""Classical tuning policies used to generate training trajectories.

Seven optimizers behind one interface: ``policy.suggest(history) -> x``.
A policy instance serves a single study, owns its RNG, and is stateful;
run separate instances for separate studies.  Histories are assumed to be
maximization-oriented (apply ``core.to_maximize`` first if needed).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (
    REGISTERED_ALGORITHMS,
    ParamKind,
    ParameterConfig,
    ParamValue,
    SearchSpace,
    Trial,
    denormalize_param,
    normalize_param,
    set_value,
    space_sample_uniform,
)
from . import gp

logger = logging.getLogger(__name__)

_CONTINUOUS = (ParamKind.DOUBLE, ParamKind.INTEGER)


@dataclass(frozen=True)
class PolicySpec:
    """Algorithm name plus every tunable policy constant."""

    name: str
    population_size: int = 25
    tournament_size: int = 5
    grid_resolution: int = 100
    eagle_c_start: float = 1.0
    eagle_c_end: float = 0.05
    eagle_c_decay: float = 0.95
    eagle_alpha_base: float = 0.2
    ucb_coefficient: float = 1.8
    gp_refit_period: int = 5
    gp_fit_restarts: int = 4
    gp_fit_max_evals: int = 400

    def __post_init__(self) -> None:
        if self.name not in REGISTERED_ALGORITHMS:
            raise ValueError(f"unknown policy {self.name!r}")
        if self.tournament_size > self.population_size:
            raise ValueError("tournament_size must be <= population_size")
        if self.tournament_size < 1 or self.population_size < 1:
            raise ValueError("population/tournament sizes must be positive")
        if self.grid_resolution < 2:
            raise ValueError("grid_resolution must be >= 2")
        if not (0.0 <= self.eagle_c_end <= self.eagle_c_start <= 1.0):
            raise ValueError("need 0 <= eagle_c_end <= eagle_c_start <= 1")
        if not (0.0 < self.eagle_c_decay <= 1.0):
            raise ValueError("eagle_c_decay must be in (0, 1]")
        if self.eagle_alpha_base < 0.0:
            raise ValueError("eagle_alpha_base must be >= 0")


# ---------------------------------------------------------------------------
# grid traversal

def _axis_grid(cfg: ParameterConfig, resolution: int) -> tuple[ParamValue, ...]:
    if cfg.kind is ParamKind.DOUBLE:
        return tuple(denormalize_param(i / (resolution - 1), cfg) for i in range(resolution))
    if cfg.kind is ParamKind.INTEGER:
        vals: list[float] = []
        for i in range(resolution):
            v = denormalize_param(i / (resolution - 1), cfg)
            if not vals or v != vals[-1]:
                vals.append(v)
        return tuple(vals)
    return tuple(cfg.values if cfg.kind is ParamKind.DISCRETE else cfg.categories)


@dataclass
class GridCursor:
    """Cartesian-product walk; the first (alphabetically-first) axis varies fastest."""

    grids: tuple[tuple[ParamValue, ...], ...]
    positions: tuple[int, ...]  # traversal slot -> index into the space's parameter order
    index: int = 0

    @property
    def total(self) -> int:
        return math.prod(len(g) for g in self.grids)


def build_grid_cursor(space: SearchSpace, resolution: int = 100) -> GridCursor:
    order = sorted(range(space.dimension), key=lambda i: space[i].name)
    grids = tuple(_axis_grid(space[i], resolution) for i in order)
    return GridCursor(grids=grids, positions=tuple(order))


def _grid_point(cursor: GridCursor, k: int) -> tuple[ParamValue, ...]:
    out: list[ParamValue] = [0.0] * len(cursor.grids)
    for grid, pos in zip(cursor.grids, cursor.positions):
        out[pos] = grid[k % len(grid)]
        k //= len(grid)
    return tuple(out)


def grid_next(cursor: GridCursor) -> tuple[ParamValue, ...]:
    """Next grid point; an exhausted cursor wraps around to index 0."""
    k = cursor.index % cursor.total
    cursor.index = k + 1
    return _grid_point(cursor, k)


@dataclass
class ShuffledGridCursor:
    base: GridCursor
    order: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    pos: int = 0


def shuffled_grid_next(cursor: ShuffledGridCursor, rng: np.random.Generator) -> tuple[ParamValue, ...]:
    """Uniform draw without replacement; reshuffles once the grid is exhausted."""
    if cursor.pos >= len(cursor.order):
        cursor.order = rng.permutation(cursor.base.total)
        cursor.pos = 0
    k = int(cursor.order[cursor.pos])
    cursor.pos += 1
    return _grid_point(cursor.base, k)


# ---------------------------------------------------------------------------
# shared move operators

def mutate(x: Sequence[ParamValue], space: SearchSpace, rng: np.random.Generator) -> tuple[ParamValue, ...]:
    """Resample one uniformly-chosen coordinate, leaving the rest untouched.

    DOUBLE draws uniformly in the scaled domain, INTEGER uniformly over the
    feasible integers, DISCRETE/CATEGORICAL uniformly over the feasible set
    (so the old value can recur by chance).
    """
    out = list(x)
    r = int(rng.integers(space.dimension))
    cfg = space[r]
    if cfg.kind is ParamKind.DOUBLE:
        out[r] = denormalize_param(float(rng.uniform(0.0, 1.0)), cfg)
    elif cfg.kind is ParamKind.INTEGER:
        lo, hi = math.ceil(cfg.min_value), math.floor(cfg.max_value)
        out[r] = float(rng.integers(lo, hi + 1))
    else:
        out[r] = set_value(int(rng.integers(cfg.set_size)), cfg)
    return tuple(out)


def eagle_move(
    x: Sequence[ParamValue],
    x_better: Sequence[ParamValue],
    c: float,
    alpha: float,
    rng: np.random.Generator,
    space: SearchSpace,
) -> tuple[ParamValue, ...]:
    """Move x toward x_better.

    Continuous coordinates take the convex combination c*x + (1-c)*x_better in
    the scaled domain.  Set-valued coordinates keep x with probability
    (1-alpha)*c, take x_better with probability (1-alpha)*(1-c), and resample
    uniformly with probability alpha.
    """
    if not (0.0 <= c <= 1.0):
        raise ValueError(f"c={c} outside [0, 1]")
    out: list[ParamValue] = []
    for cfg, a, b in zip(space.parameters, x, x_better):
        if cfg.kind in _CONTINUOUS:
            ua = normalize_param(a, cfg)
            ub = normalize_param(b, cfg)
            # endpoints and coincident operands return the input verbatim;
            # the float combination would drift off them
            if ua == ub or c == 1.0:
                out.append(a)
            elif c == 0.0:
                out.append(b)
            else:
                u = c * ua + (1.0 - c) * ub
                out.append(denormalize_param(min(max(u, 0.0), 1.0), cfg))
        else:
            roll = float(rng.uniform())
            if roll < (1.0 - alpha) * c:
                out.append(a)
            elif roll < 1.0 - alpha:
                out.append(b)
            else:
                out.append(set_value(int(rng.integers(cfg.set_size)), cfg))
    return tuple(out)


def _best_trial(history: Sequence[Trial]) -> Trial:
    best = history[0]
    for t in history[1:]:
        if t.y > best.y:
            best = t
    return best


# ---------------------------------------------------------------------------
# policies

class Policy:
    """Stateful suggester bound to one search space."""

    name: str = ""

    def __init__(self, space: SearchSpace, spec: PolicySpec | None = None, seed=None) -> None:
        self.space = space
        self.spec = spec if spec is not None else PolicySpec(name=self.name)
        if self.spec.name != self.name:
            raise ValueError(f"spec names {self.spec.name!r}, policy is {self.name!r}")
        self.rng = np.random.default_rng(seed)

    def suggest(self, history: Sequence[Trial]) -> tuple[ParamValue, ...]:
        raise NotImplementedError


class RandomPolicy(Policy):
    name = "random_search"

    def suggest(self, history: Sequence[Trial]) -> tuple[ParamValue, ...]:
        return space_sample_uniform(self.space, self.rng)


class GridPolicy(Policy):
    name = "grid_search"

    def __init__(self, space: SearchSpace, spec: PolicySpec | None = None, seed=None) -> None:
        super().__init__(space, spec, seed)
        self.cursor = build_grid_cursor(space, self.spec.grid_resolution)

    def suggest(self, history: Sequence[Trial]) -> tuple[ParamValue, ...]:
        return grid_next(self.cursor)


class ShuffledGridPolicy(Policy):
    name = "shuffled_grid_search"

    def __init__(self, space: SearchSpace, spec: PolicySpec | None = None, seed=None) -> None:
        super().__init__(space, spec, seed)
        self.cursor = ShuffledGridCursor(base=build_grid_cursor(space, self.spec.grid_resolution))

    def suggest(self, history: Sequence[Trial]) -> tuple[ParamValue, ...]:
        return shuffled_grid_next(self.cursor, self.rng)


class RegEvolutionPolicy(Policy):
    """Tournament selection over a sliding window of the most recent trials."""

    name = "regularized_evolution"

    def suggest(self, history: Sequence[Trial]) -> tuple[ParamValue, ...]:
        population = history[-self.spec.population_size :]
        if len(population) < self.spec.population_size:
            return space_sample_uniform(self.space, self.rng)
        picks = self.rng.choice(len(population), size=self.spec.tournament_size, replace=False)
        winner = _best_trial([population[int(i)] for i in picks])
        return mutate(winner.x, self.space, self.rng)


class HillClimbPolicy(Policy):
    """Mutates a pivot that moves only on strict improvement."""

    name = "hill_climbing"

    def suggest(self, history: Sequence[Trial]) -> tuple[ParamValue, ...]:
        if not history:
            return space_sample_uniform(self.space, self.rng)
        # replaying strict-improvement acceptance over the history leaves the
        # pivot at the running maximum (earliest trial wins ties)
        return mutate(_best_trial(history).x, self.space, self.rng)


class EaglePolicy(Policy):
    """Pairwise reduction of the swarm: move a fresh uniform scout toward the
    incumbent, with the scout's weight c decaying so sampling zooms in."""

    name = "eagle_strategy"

    def suggest(self, history: Sequence[Trial]) -> tuple[ParamValue, ...]:
        if not history:
            return space_sample_uniform(self.space, self.rng)
        s = self.spec
        c = max(s.eagle_c_end, s.eagle_c_start * s.eagle_c_decay ** len(history))
        alpha = s.eagle_alpha_base / self.space.dimension
        scout = space_sample_uniform(self.space, self.rng)
        x = eagle_move(scout, _best_trial(history).x, c, alpha, self.rng, self.space)
        # uniform perturbation arm for continuous coordinates (eagle_move only
        # resamples set-valued ones)
        out = list(x)
        for i, cfg in enumerate(self.space.parameters):
            if cfg.kind in _CONTINUOUS and float(self.rng.uniform()) < alpha:
                out[i] = denormalize_param(float(self.rng.uniform(0.0, 1.0)), cfg)
        return tuple(out)


class GpUcbPolicy(Policy):
    """Maximizes mean + coef*stddev of a GP fit on the unit-cube embedding."""

    name = "gp_ucb"

    def __init__(self, space: SearchSpace, spec: PolicySpec | None = None, seed=None) -> None:
        super().__init__(space, spec, seed)
        self._hp: gp.GpHyperparams | None = None
        self._hp_trials = 0

    def _encode(self, x: Sequence[ParamValue]) -> list[float]:
        return [float(normalize_param(v, cfg, set_as_unit=True)) for v, cfg in zip(x, self.space.parameters)]

    def _decode(self, u: np.ndarray) -> tuple[ParamValue, ...]:
        out: list[ParamValue] = []
        for ui, cfg in zip(u, self.space.parameters):
            if cfg.kind in _CONTINUOUS:
                out.append(denormalize_param(float(ui), cfg))
            else:
                n = cfg.set_size
                out.append(set_value(int(round(float(ui) * (n - 1))), cfg))
        return tuple(out)

    def _center(self) -> tuple[ParamValue, ...]:
        out: list[ParamValue] = []
        for cfg in self.space.parameters:
            if cfg.kind in _CONTINUOUS:
                out.append(denormalize_param(0.5, cfg))
            else:
                out.append(set_value((cfg.set_size - 1) // 2, cfg))
        return tuple(out)

    def _axis_levels(self, cfg: ParameterConfig) -> np.ndarray:
        if cfg.kind in _CONTINUOUS:
            return np.linspace(0.0, 1.0, 17)
        n = cfg.set_size
        return np.arange(n) / (n - 1) if n > 1 else np.zeros(1)

    def _snap(self, u: np.ndarray) -> np.ndarray:
        u = np.array(u, dtype=float)
        for j, cfg in enumerate(self.space.parameters):
            if cfg.kind not in _CONTINUOUS:
                n = cfg.set_size
                u[..., j] = np.round(u[..., j] * (n - 1)) / (n - 1) if n > 1 else 0.0
        return u

    def suggest(self, history: Sequence[Trial]) -> tuple[ParamValue, ...]:
        if not history:
            return self._center()
        inputs = np.array([self._encode(t.x) for t in history], dtype=float)
        targets = np.array([t.y for t in history], dtype=float)
        try:
            if self._hp is None or len(history) - self._hp_trials >= self.spec.gp_refit_period:
                post = gp.fit(
                    inputs,
                    targets,
                    restarts=self.spec.gp_fit_restarts,
                    rng=self.rng,
                    max_evals=self.spec.gp_fit_max_evals,
                )
                self._hp = post.hyperparams
                self._hp_trials = len(history)
            else:
                post = gp.make_posterior(inputs, targets, self._hp)
        except np.linalg.LinAlgError as err:
            logger.warning("GP fit failed (%s); falling back to a random suggestion", err)
            return space_sample_uniform(self.space, self.rng)
        return self._decode(self._maximize_ucb(post, inputs))

    def _maximize_ucb(self, post: gp.GpPosterior, observed: np.ndarray) -> np.ndarray:
        coef = self.spec.ucb_coefficient
        d = self.space.dimension
        cands = np.vstack(
            [
                self._snap(self.rng.uniform(size=(64, d))),
                self._snap(observed),
                self._snap(np.full((1, d), 0.5)),
            ]
        )
        mean, var = gp.predict_batch(post, cands)
        best = cands[int(np.argmax(mean + coef * np.sqrt(var)))]
        for _ in range(2):  # coordinate refinement sweeps
            for j in range(d):
                levels = self._axis_levels(self.space[j])
                trial_pts = np.tile(best, (len(levels), 1))
                trial_pts[:, j] = levels
                mean, var = gp.predict_batch(post, trial_pts)
                best = trial_pts[int(np.argmax(mean + coef * np.sqrt(var)))]
        return best


_POLICY_CLASSES: dict[str, type[Policy]] = {
    cls.name: cls
    for cls in (
        GridPolicy,
        ShuffledGridPolicy,
        RandomPolicy,
        RegEvolutionPolicy,
        HillClimbPolicy,
        EaglePolicy,
        GpUcbPolicy,
    )
}


def make_policy(spec: PolicySpec | str, space: SearchSpace, seed=None) -> Policy:
    """Instantiate a policy from a PolicySpec or a bare algorithm name."""
    if isinstance(spec, str):
        spec = PolicySpec(name=spec)
    return _POLICY_CLASSES[spec.name](space, spec, seed)
