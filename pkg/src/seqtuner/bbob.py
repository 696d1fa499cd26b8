"""Randomized synthetic objective tasks.

Each task wraps a classical black-box cost function with a random rotation,
a random optimum shift, optional per-axis discretization, and optional
observation noise.  Values are returned in maximization convention (costs
negated).  Domain is [-5, 5] per axis.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import ParamKind, ParameterConfig, SearchSpace
from .tokenizer import format_number

DOMAIN_LO = -5.0
DOMAIN_HI = 5.0
SHIFT_LO = -4.0
SHIFT_HI = 4.0


class Family(enum.Enum):
    SPHERE = "sphere"
    RASTRIGIN_SEPARABLE = "rastrigin_separable"
    ATTRACTIVE_SECTOR = "attractive_sector"
    SCHAFFERS_F7 = "schaffers_f7"
    SCHWEFEL = "schwefel"
    LINEAR_SLOPE = "linear_slope"
    ROSENBROCK_ROTATED = "rosenbrock_rotated"
    SUM_OF_POWERS = "sum_of_powers"
    GRIEWANK_ROSENBROCK = "griewank_rosenbrock"
    LUNACEK = "lunacek"


TRAIN_FAMILIES = (
    Family.SPHERE,
    Family.RASTRIGIN_SEPARABLE,
    Family.ATTRACTIVE_SECTOR,
    Family.SCHAFFERS_F7,
    Family.SCHWEFEL,
)
TEST_FAMILIES = (
    Family.LINEAR_SLOPE,
    Family.ROSENBROCK_ROTATED,
    Family.SUM_OF_POWERS,
    Family.GRIEWANK_ROSENBROCK,
    Family.LUNACEK,
)

#: Families whose cost minimum sits exactly at the shifted point; used by the
#: optimum-location sanity checks.
UNIMODAL_AT_SHIFT = (Family.SPHERE, Family.ATTRACTIVE_SECTOR, Family.SUM_OF_POWERS)


# ---------------------------------------------------------------------------
# cost functions of the rotated/shifted coordinate z


def _sphere(z: np.ndarray) -> float:
    return float(z @ z)


def _rastrigin_separable(z: np.ndarray) -> float:
    return float(10.0 * (z.size - np.cos(2.0 * np.pi * z).sum()) + z @ z)


def _attractive_sector(z: np.ndarray) -> float:
    s = np.where(z > 0.0, 100.0, 1.0)
    return float(((s * z) ** 2).sum())


def _schaffers_f7(z: np.ndarray) -> float:
    if z.size == 1:
        s = np.abs(z)
    else:
        s = np.sqrt(z[:-1] ** 2 + z[1:] ** 2)
    root = np.sqrt(s)
    val = (root + root * np.sin(50.0 * s**0.2) ** 2).mean()
    return float(val * val)


def _schwefel(z: np.ndarray) -> float:
    # scaled into the [-5,5] working domain: u covers [-500, 500]
    u = 100.0 * z
    return float(418.9828872724339 * z.size - (u * np.sin(np.sqrt(np.abs(u)))).sum())


def _linear_slope(z: np.ndarray) -> float:
    return float((DOMAIN_HI - z).sum())


def _rosenbrock_rotated(z: np.ndarray) -> float:
    if z.size == 1:
        return float((z[0] - 1.0) ** 2)
    return float((100.0 * (z[:-1] ** 2 - z[1:]) ** 2 + (z[:-1] - 1.0) ** 2).sum())


def _sum_of_powers(z: np.ndarray) -> float:
    D = z.size
    expo = 2.0 + 4.0 * np.arange(D) / (D - 1) if D > 1 else np.array([2.0])
    return float(np.sqrt((np.abs(z) ** expo).sum()))


def _griewank_rosenbrock(z: np.ndarray) -> float:
    if z.size == 1:
        s = np.array([100.0 * (z[0] ** 2 - z[0]) ** 2 + (z[0] - 1.0) ** 2])
    else:
        s = 100.0 * (z[:-1] ** 2 - z[1:]) ** 2 + (z[:-1] - 1.0) ** 2
    return float(10.0 / max(z.size - 1, 1) * (s / 4000.0 - np.cos(s)).sum() + 10.0)


def _lunacek(z: np.ndarray) -> float:
    D = z.size
    mu0, d = 2.5, 1.0
    s = 1.0 - 1.0 / (2.0 * math.sqrt(D + 20.0) - 8.2)
    mu1 = -math.sqrt((mu0 * mu0 - d) / s)
    sum1 = float(((z - mu0) ** 2).sum())
    sum2 = d * D + s * float(((z - mu1) ** 2).sum())
    return min(sum1, sum2) + 10.0 * (D - float(np.cos(2.0 * np.pi * (z - mu0)).sum()))


_FAMILY_FNS: dict[Family, Callable[[np.ndarray], float]] = {
    Family.SPHERE: _sphere,
    Family.RASTRIGIN_SEPARABLE: _rastrigin_separable,
    Family.ATTRACTIVE_SECTOR: _attractive_sector,
    Family.SCHAFFERS_F7: _schaffers_f7,
    Family.SCHWEFEL: _schwefel,
    Family.LINEAR_SLOPE: _linear_slope,
    Family.ROSENBROCK_ROTATED: _rosenbrock_rotated,
    Family.SUM_OF_POWERS: _sum_of_powers,
    Family.GRIEWANK_ROSENBROCK: _griewank_rosenbrock,
    Family.LUNACEK: _lunacek,
}


# ---------------------------------------------------------------------------
# noise


class NoiseKind(enum.Enum):
    NONE = "NONE"
    GAUSSIAN_MULT = "GAUSSIAN_MULT"
    UNIFORM_MULT = "UNIFORM_MULT"
    CAUCHY_ADD = "CAUCHY_ADD"


@dataclass(frozen=True)
class NoiseConfig:
    kind: NoiseKind = NoiseKind.NONE
    scale: float = 0.0
    frequency: float = 0.2  # Cauchy only

    def __post_init__(self) -> None:
        if self.scale < 0:
            raise ValueError("noise scale must be >= 0")
        if not (0.0 <= self.frequency <= 1.0):
            raise ValueError("frequency must lie in [0, 1]")


def _apply_noise(value: float, noise: NoiseConfig, rng: np.random.Generator) -> float:
    if noise.kind is NoiseKind.NONE or noise.scale == 0.0:
        return value
    if noise.kind is NoiseKind.GAUSSIAN_MULT:
        return value * float(rng.normal(1.0, noise.scale))
    if noise.kind is NoiseKind.UNIFORM_MULT:
        return value * float(rng.uniform(1.0 - noise.scale, 1.0 + noise.scale))
    # CAUCHY_ADD: heavy-tailed additive noise at a fixed frequency, clipped so
    # downstream metrics stay finite
    if rng.uniform() < noise.frequency:
        draw = noise.scale * float(rng.standard_cauchy())
        bound = 100.0 * noise.scale
        return value + min(max(draw, -bound), bound)
    return value


# ---------------------------------------------------------------------------
# axes


class AxisKind(enum.Enum):
    CONTINUOUS = "CONTINUOUS"
    DISCRETE = "DISCRETE"
    CATEGORICAL = "CATEGORICAL"


@dataclass(frozen=True)
class AxisSpec:
    kind: AxisKind
    points: tuple[float, ...] = ()  # grid values, ordered (empty if continuous)
    labels: tuple[str, ...] = ()  # categorical labels, aligned with points


def discretize_axis(kind: AxisKind, L: int, rng: np.random.Generator) -> AxisSpec:
    """Axis restricted to L equally spaced points of [-5, 5].

    DISCRETE keeps the ordered reals; CATEGORICAL relabels them as strings
    and shuffles the label order (categories carry no order).
    """
    if kind is AxisKind.CONTINUOUS:
        return AxisSpec(AxisKind.CONTINUOUS)
    if not 2 <= L <= 8:
        raise ValueError("L must lie in [2, 8]")
    pts = tuple(float(p) for p in np.linspace(DOMAIN_LO, DOMAIN_HI, L))
    if kind is AxisKind.DISCRETE:
        return AxisSpec(AxisKind.DISCRETE, points=pts)
    order = rng.permutation(L)
    shuffled = tuple(pts[i] for i in order)
    labels = tuple(format_number(p) for p in shuffled)
    return AxisSpec(AxisKind.CATEGORICAL, points=shuffled, labels=labels)


# ---------------------------------------------------------------------------
# tasks


@dataclass(frozen=True)
class BbobTask:
    family: Family
    dimension: int
    rotation: np.ndarray
    shift: np.ndarray
    axes: tuple[AxisSpec, ...]
    noise: NoiseConfig
    seed: int
    dim_range: tuple[int, int]
    family_names: tuple[str, ...]
    force_continuous: bool = False
    forced_noise: str = ""

    def __post_init__(self) -> None:
        self.rotation.setflags(write=False)
        self.shift.setflags(write=False)
        if not (1 <= self.dimension <= 20):
            raise ValueError("dimension must lie in [1, 20]")
        if np.abs(self.rotation.T @ self.rotation - np.eye(self.dimension)).max() > 1e-9:
            raise ValueError("rotation is not orthonormal")
        if np.any(self.shift < SHIFT_LO) or np.any(self.shift > SHIFT_HI):
            raise ValueError("shift outside [-4, 4]")

    @property
    def space(self) -> SearchSpace:
        params = []
        for d, ax in enumerate(self.axes):
            name = f"x{d}"
            if ax.kind is AxisKind.CONTINUOUS:
                params.append(
                    ParameterConfig(name, ParamKind.DOUBLE, min_value=DOMAIN_LO, max_value=DOMAIN_HI)
                )
            elif ax.kind is AxisKind.DISCRETE:
                params.append(ParameterConfig(name, ParamKind.DISCRETE, values=ax.points))
            else:
                params.append(ParameterConfig(name, ParamKind.CATEGORICAL, categories=ax.labels))
        return SearchSpace(tuple(params))

    def descriptor(self) -> dict:
        return {
            "seed": self.seed,
            "family": self.family.value,
            "dimension": self.dimension,
            "dim_range": list(self.dim_range),
            "families": list(self.family_names),
            "axes": [
                {"kind": ax.kind.value, "num_points": len(ax.points)} for ax in self.axes
            ],
            "noise": {
                "kind": self.noise.kind.value,
                "scale": self.noise.scale,
                "frequency": self.noise.frequency,
            },
            "force_continuous": self.force_continuous,
            "forced_noise": self.forced_noise,
        }


def random_rotation(D: int, rng: np.random.Generator) -> np.ndarray:
    """Orthonormal matrix drawn uniformly (QR of a Gaussian matrix)."""
    if D < 1:
        raise ValueError("D must be >= 1")
    a = rng.normal(size=(D, D))
    q, r = np.linalg.qr(a)
    q = q * np.where(np.diag(r) >= 0.0, 1.0, -1.0)
    return q


def _parse_noise_override(spec: str, frequency: float) -> NoiseConfig:
    if spec in ("", "none"):
        return NoiseConfig(NoiseKind.NONE, 0.0, frequency)
    kind_s, _, scale_s = spec.partition(":")
    return NoiseConfig(NoiseKind[kind_s.upper()], float(scale_s or 0.1), frequency)


def sample_task(
    seed: int,
    dim_range: tuple[int, int] = (1, 20),
    family_set: Sequence[Family] = TRAIN_FAMILIES,
    *,
    noise_scales: Sequence[float] = (0.01, 0.1, 1.0),
    cauchy_frequency: float = 0.2,
    force_continuous: bool = False,
    forced_noise: str | None = None,
) -> BbobTask:
    """Draw one randomized task: family, dimension, rotation, shift,
    per-axis discretization, then noise (one of 10 settings including none).

    Deterministic per (seed, options).  forced_noise accepts "none" or
    "kind:scale" to pin the noise setting.
    """
    if not family_set:
        raise ValueError("family_set must not be empty")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    family = family_set[int(rng.integers(len(family_set)))]
    D = int(rng.integers(dim_range[0], dim_range[1] + 1))
    rotation = random_rotation(D, rng)
    shift = rng.uniform(SHIFT_LO, SHIFT_HI, size=D)

    axes: list[AxisSpec] = []
    for _ in range(D):
        if force_continuous:
            axes.append(AxisSpec(AxisKind.CONTINUOUS))
            continue
        kind = (AxisKind.CONTINUOUS, AxisKind.DISCRETE, AxisKind.CATEGORICAL)[int(rng.integers(3))]
        if kind is AxisKind.CONTINUOUS:
            axes.append(AxisSpec(AxisKind.CONTINUOUS))
        else:
            L = int(rng.integers(2, 9))
            axes.append(discretize_axis(kind, L, rng))

    if forced_noise is not None:
        noise = _parse_noise_override(forced_noise, cauchy_frequency)
    else:
        setting = int(rng.integers(1 + 3 * len(noise_scales)))
        if setting == 0:
            noise = NoiseConfig(NoiseKind.NONE, 0.0, cauchy_frequency)
        else:
            kind = (NoiseKind.GAUSSIAN_MULT, NoiseKind.UNIFORM_MULT, NoiseKind.CAUCHY_ADD)[
                (setting - 1) // len(noise_scales)
            ]
            noise = NoiseConfig(kind, float(noise_scales[(setting - 1) % len(noise_scales)]), cauchy_frequency)

    return BbobTask(
        family=family,
        dimension=D,
        rotation=rotation,
        shift=shift,
        axes=tuple(axes),
        noise=noise,
        seed=int(seed),
        dim_range=(int(dim_range[0]), int(dim_range[1])),
        family_names=tuple(f.value for f in family_set),
        force_continuous=force_continuous,
        forced_noise=forced_noise or "",
    )


def task_from_descriptor(desc: dict) -> BbobTask:
    """Regenerate a task from its serialized descriptor; verifies the draw."""
    task = sample_task(
        int(desc["seed"]),
        dim_range=tuple(desc["dim_range"]),
        family_set=tuple(Family(n) for n in desc["families"]),
        force_continuous=bool(desc.get("force_continuous", False)),
        forced_noise=desc.get("forced_noise") or None,
    )
    if task.family.value != desc["family"] or task.dimension != desc["dimension"]:
        raise ValueError("descriptor does not match the regenerated task")
    return task


def _x_to_vector(task: BbobTask, x: Sequence) -> np.ndarray:
    v = np.empty(task.dimension)
    for d, (ax, xv) in enumerate(zip(task.axes, x)):
        if ax.kind is AxisKind.CATEGORICAL:
            try:
                v[d] = ax.points[ax.labels.index(xv)]
            except ValueError:
                raise ValueError(f"axis {d}: unknown category {xv!r}") from None
        else:
            fv = float(xv)
            if ax.kind is AxisKind.DISCRETE:
                if not any(math.isclose(fv, p, rel_tol=1e-12, abs_tol=1e-12) for p in ax.points):
                    raise ValueError(f"axis {d}: {fv} not a feasible grid point")
            elif not (DOMAIN_LO <= fv <= DOMAIN_HI):
                raise ValueError(f"axis {d}: {fv} outside [{DOMAIN_LO}, {DOMAIN_HI}]")
            v[d] = fv
    return v


def noiseless_value(task: BbobTask, x: Sequence) -> float:
    """Deterministic objective value (maximization sign) without noise."""
    v = _x_to_vector(task, x)
    z = task.rotation @ (v - task.shift)
    return -_FAMILY_FNS[task.family](z)


def evaluate(task: BbobTask, x: Sequence, rng: np.random.Generator | None = None) -> float:
    """Objective value at x with the task's noise applied."""
    value = noiseless_value(task, x)
    if task.noise.kind is not NoiseKind.NONE:
        if rng is None:
            raise ValueError("noisy task evaluation needs an rng")
        value = _apply_noise(value, task.noise, rng)
    return value
