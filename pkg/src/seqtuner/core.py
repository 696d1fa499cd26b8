"""Search spaces, studies, trials, and value normalization.

These types are shared by every other module. All of them are immutable
after construction so they can be passed around freely.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

ParamValue = Union[float, int, str]


class ParamKind(enum.Enum):
    DOUBLE = "DOUBLE"
    INTEGER = "INTEGER"
    DISCRETE = "DISCRETE"
    CATEGORICAL = "CATEGORICAL"


class Scale(enum.Enum):
    LINEAR = "LINEAR"
    LOG = "LOG"


class Goal(enum.Enum):
    MAXIMIZE = "MAXIMIZE"
    MINIMIZE = "MINIMIZE"


#: Algorithm names accepted in Metadata.algorithm (empty string also allowed).
REGISTERED_ALGORITHMS = frozenset(
    {
        "grid_search",
        "shuffled_grid_search",
        "random_search",
        "regularized_evolution",
        "hill_climbing",
        "eagle_strategy",
        "gp_ucb",
    }
)


@dataclass(frozen=True)
class ParameterConfig:
    """One tunable parameter.

    DOUBLE/INTEGER use [min_value, max_value] with a LINEAR or LOG scale.
    DISCRETE uses an ordered list of feasible reals, CATEGORICAL an ordered
    list of unique strings.
    """

    name: str
    kind: ParamKind
    min_value: float | None = None
    max_value: float | None = None
    scale: Scale = Scale.LINEAR
    values: tuple[float, ...] = ()
    categories: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "categories", tuple(self.categories))
        if self.kind in (ParamKind.DOUBLE, ParamKind.INTEGER):
            if self.min_value is None or self.max_value is None:
                raise ValueError(f"{self.name}: {self.kind.value} requires min/max bounds")
            if not (self.min_value <= self.max_value):
                raise ValueError(f"{self.name}: min_value must be <= max_value")
            if self.scale is Scale.LOG and self.min_value <= 0:
                raise ValueError(f"{self.name}: LOG scale requires min_value > 0")
            if not math.isfinite(self.min_value) or not math.isfinite(self.max_value):
                raise ValueError(f"{self.name}: bounds must be finite")
        elif self.kind is ParamKind.DISCRETE:
            if not self.values:
                raise ValueError(f"{self.name}: DISCRETE requires a nonempty values list")
            if any(b <= a for a, b in zip(self.values, self.values[1:])):
                raise ValueError(f"{self.name}: DISCRETE values must be strictly increasing")
        elif self.kind is ParamKind.CATEGORICAL:
            if not self.categories:
                raise ValueError(f"{self.name}: CATEGORICAL requires categories")
            if len(set(self.categories)) != len(self.categories):
                raise ValueError(f"{self.name}: categories must be unique")

    @property
    def set_size(self) -> int:
        """Number of feasible points for DISCRETE/CATEGORICAL parameters."""
        if self.kind is ParamKind.DISCRETE:
            return len(self.values)
        if self.kind is ParamKind.CATEGORICAL:
            return len(self.categories)
        raise ValueError(f"{self.name}: set_size undefined for {self.kind.value}")

    def contains(self, value: ParamValue) -> bool:
        if self.kind in (ParamKind.DOUBLE, ParamKind.INTEGER):
            if isinstance(value, str) or not math.isfinite(float(value)):
                return False
            v = float(value)
            if self.kind is ParamKind.INTEGER and v != round(v):
                return False
            return self.min_value <= v <= self.max_value
        if self.kind is ParamKind.DISCRETE:
            if isinstance(value, str):
                return False
            return any(math.isclose(float(value), fv, rel_tol=1e-12, abs_tol=1e-12) for fv in self.values)
        return value in self.categories


@dataclass(frozen=True)
class SearchSpace:
    parameters: tuple[ParameterConfig, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "parameters", tuple(self.parameters))
        if len(self.parameters) < 1:
            raise ValueError("search space needs at least one parameter")
        names = [p.name for p in self.parameters]
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be unique")

    @property
    def dimension(self) -> int:
        return len(self.parameters)

    def __iter__(self):
        return iter(self.parameters)

    def __getitem__(self, i: int) -> ParameterConfig:
        return self.parameters[i]


@dataclass(frozen=True)
class Metadata:
    name: str
    metric_name: str
    goal: Goal
    algorithm: str
    space: SearchSpace
    free_text: str = ""

    def __post_init__(self) -> None:
        if self.algorithm and self.algorithm not in REGISTERED_ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")


@dataclass(frozen=True)
class Trial:
    x: tuple[ParamValue, ...]
    y: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", tuple(self.x))
        object.__setattr__(self, "y", float(self.y))
        if not math.isfinite(self.y):
            raise ValueError("trial objective must be finite")


@dataclass(frozen=True)
class Study:
    metadata: Metadata
    trials: tuple[Trial, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "trials", tuple(self.trials))
        space = self.metadata.space
        for t_index, trial in enumerate(self.trials):
            if len(trial.x) != space.dimension:
                raise ValueError(f"trial {t_index}: expected {space.dimension} values, got {len(trial.x)}")
            for cfg, value in zip(space.parameters, trial.x):
                if not cfg.contains(value):
                    raise ValueError(f"trial {t_index}: value {value!r} outside domain of {cfg.name!r}")


# ---------------------------------------------------------------------------
# normalization

def _transform(cfg: ParameterConfig, v: float) -> float:
    return math.log(v) if cfg.scale is Scale.LOG else v


def normalize_param(value: ParamValue, cfg: ParameterConfig, *, set_as_unit: bool = False):
    """Map a parameter value to [0, 1] (DOUBLE/INTEGER) or a set index.

    DOUBLE and INTEGER values map through (g(x) - g(min)) / (g(max) - g(min))
    with g = log for LOG scale and identity otherwise.  DISCRETE/CATEGORICAL
    return the raw index by default; pass set_as_unit=True to get
    index / (set_size - 1) instead (used for unit-cube embeddings).

    Raises ValueError for values outside the parameter's domain.
    """
    if cfg.kind in (ParamKind.DOUBLE, ParamKind.INTEGER):
        v = float(value)
        if not (cfg.min_value <= v <= cfg.max_value):
            raise ValueError(f"{cfg.name}: value {v} outside [{cfg.min_value}, {cfg.max_value}]")
        lo = _transform(cfg, cfg.min_value)
        hi = _transform(cfg, cfg.max_value)
        if hi == lo:
            return 0.0
        return (_transform(cfg, v) - lo) / (hi - lo)
    idx = set_index(value, cfg)
    if set_as_unit:
        n = cfg.set_size
        return idx / (n - 1) if n > 1 else 0.0
    return idx


def denormalize_param(u: float, cfg: ParameterConfig) -> float:
    """Inverse of normalize_param for DOUBLE/INTEGER.

    INTEGER results are rounded to the nearest integer in range.
    """
    if cfg.kind not in (ParamKind.DOUBLE, ParamKind.INTEGER):
        raise ValueError(f"{cfg.name}: denormalize_param only applies to DOUBLE/INTEGER")
    if not (0.0 <= u <= 1.0):
        raise ValueError(f"{cfg.name}: u={u} outside [0, 1]")
    if u == 0.0:
        v = float(cfg.min_value)
    elif u == 1.0:
        v = float(cfg.max_value)
    else:
        lo = _transform(cfg, cfg.min_value)
        hi = _transform(cfg, cfg.max_value)
        g = lo + u * (hi - lo)
        v = math.exp(g) if cfg.scale is Scale.LOG else g
        # guard against round-off drifting past the bounds
        v = min(max(v, cfg.min_value), cfg.max_value)
    if cfg.kind is ParamKind.INTEGER:
        v = float(min(max(round(v), math.ceil(cfg.min_value)), math.floor(cfg.max_value)))
    return v


def set_index(value: ParamValue, cfg: ParameterConfig) -> int:
    """Index of a DISCRETE/CATEGORICAL value in its feasible set."""
    if cfg.kind is ParamKind.DISCRETE:
        v = float(value)
        for i, fv in enumerate(cfg.values):
            if math.isclose(v, fv, rel_tol=1e-12, abs_tol=1e-12):
                return i
        raise ValueError(f"{cfg.name}: {value!r} not in feasible values")
    if cfg.kind is ParamKind.CATEGORICAL:
        try:
            return cfg.categories.index(value)
        except ValueError:
            raise ValueError(f"{cfg.name}: {value!r} not a category") from None
    raise ValueError(f"{cfg.name}: set_index undefined for {cfg.kind.value}")


def set_value(index: int, cfg: ParameterConfig) -> ParamValue:
    """Value at a given index of a DISCRETE/CATEGORICAL feasible set."""
    if index < 0 or index >= cfg.set_size:
        raise ValueError(f"{cfg.name}: index {index} out of range [0, {cfg.set_size})")
    if cfg.kind is ParamKind.DISCRETE:
        return cfg.values[index]
    return cfg.categories[index]


def to_maximize(study: Study) -> Study:
    """Canonical internal form: MINIMIZE studies get their y negated.

    Display-side conversions undo this. MAXIMIZE studies pass through
    unchanged (same object).
    """
    if study.metadata.goal is Goal.MAXIMIZE:
        return study
    meta = Metadata(
        name=study.metadata.name,
        metric_name=study.metadata.metric_name,
        goal=Goal.MAXIMIZE,
        algorithm=study.metadata.algorithm,
        space=study.metadata.space,
        free_text=study.metadata.free_text,
    )
    trials = tuple(Trial(x=t.x, y=-t.y) for t in study.trials)
    return Study(metadata=meta, trials=trials)


def space_sample_uniform(space: SearchSpace, rng) -> tuple[ParamValue, ...]:
    """Uniform sample over the space; DOUBLE/INTEGER uniform in scaled domain."""
    out: list[ParamValue] = []
    for cfg in space.parameters:
        if cfg.kind in (ParamKind.DOUBLE, ParamKind.INTEGER):
            out.append(denormalize_param(float(rng.uniform(0.0, 1.0)), cfg))
        else:
            out.append(set_value(int(rng.integers(cfg.set_size)), cfg))
    return tuple(out)
