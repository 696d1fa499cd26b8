"""Synthetic task tests: rotations, discretization, noise, optima."""
from __future__ import annotations

import math

import numpy as np
import pytest

from seqtuner.bbob import (
    TEST_FAMILIES,
    TRAIN_FAMILIES,
    UNIMODAL_AT_SHIFT,
    AxisKind,
    AxisSpec,
    BbobTask,
    Family,
    NoiseConfig,
    NoiseKind,
    discretize_axis,
    evaluate,
    noiseless_value,
    random_rotation,
    sample_task,
    task_from_descriptor,
)


def _continuous_task(family: Family, D: int, seed: int = 0, shift: np.ndarray | None = None) -> BbobTask:
    rng = np.random.default_rng(seed)
    return BbobTask(
        family=family,
        dimension=D,
        rotation=np.eye(D),
        shift=shift if shift is not None else rng.uniform(-4, 4, D),
        axes=tuple(AxisSpec(AxisKind.CONTINUOUS) for _ in range(D)),
        noise=NoiseConfig(),
        seed=seed,
        dim_range=(D, D),
        family_names=(family.value,),
    )


# ---------------------------------------------------------------------------
# rotations

def test_rotation_d1_is_sign() -> None:
    rng = np.random.default_rng(0)
    for _ in range(10):
        g = random_rotation(1, rng)
        assert g.shape == (1, 1)
        assert abs(abs(g[0, 0]) - 1.0) < 1e-12


def test_rotation_orthonormal_and_isometric() -> None:
    rng = np.random.default_rng(1)
    for D in (2, 5, 12):
        g = random_rotation(D, rng)
        assert np.abs(g.T @ g - np.eye(D)).max() < 1e-9
        assert abs(abs(np.linalg.det(g)) - 1.0) < 1e-9
        for _ in range(20):
            x = rng.normal(size=D)
            assert np.linalg.norm(g @ x) == pytest.approx(np.linalg.norm(x), abs=1e-9)


def test_rotation_entries_centered() -> None:
    # distributional check: entry means over many draws vanish
    rng = np.random.default_rng(2)
    D, n = 3, 10000
    acc = np.zeros((D, D))
    for _ in range(n):
        acc += random_rotation(D, rng)
    means = acc / n
    se = 1.0 / math.sqrt(n * D)  # each entry has variance 1/D
    assert np.abs(means).max() < 3.5 * se


# ---------------------------------------------------------------------------
# sampling

def test_sample_task_deterministic() -> None:
    a = sample_task(42)
    b = sample_task(42)
    assert a.family == b.family and a.dimension == b.dimension
    assert np.array_equal(a.rotation, b.rotation)
    assert np.array_equal(a.shift, b.shift)
    assert a.axes == b.axes and a.noise == b.noise


def test_dimension_distribution_uniform() -> None:
    rng_seeds = range(10_000)
    counts = np.zeros(20, dtype=int)
    for s in rng_seeds:
        counts[sample_task(s, dim_range=(1, 20)).dimension - 1] += 1
    n, p = 10_000, 1 / 20
    sigma = math.sqrt(n * p * (1 - p))
    assert np.abs(counts - n * p).max() < 3.5 * sigma


def test_discretization_kind_distribution_uniform() -> None:
    counts = {k: 0 for k in AxisKind}
    total = 0
    for s in range(3000):
        task = sample_task(s, dim_range=(1, 6))
        for ax in task.axes:
            counts[ax.kind] += 1
            total += 1
    p = 1 / 3
    sigma = math.sqrt(total * p * (1 - p))
    for k in AxisKind:
        assert abs(counts[k] - total * p) < 3.5 * sigma


def test_noise_settings_cover_ten() -> None:
    seen = set()
    for s in range(2000):
        t = sample_task(s)
        seen.add((t.noise.kind, t.noise.scale))
    assert (NoiseKind.NONE, 0.0) in seen
    assert len(seen) == 10


def test_descriptor_round_trip() -> None:
    task = sample_task(7, dim_range=(2, 6))
    desc = task.descriptor()
    again = task_from_descriptor(desc)
    assert np.array_equal(again.rotation, task.rotation)
    assert again.axes == task.axes
    assert again.noise == task.noise


# ---------------------------------------------------------------------------
# axes

def test_discretize_axis_examples() -> None:
    rng = np.random.default_rng(0)
    ax2 = discretize_axis(AxisKind.DISCRETE, 2, rng)
    assert ax2.points == (-5.0, 5.0)
    ax3 = discretize_axis(AxisKind.DISCRETE, 3, rng)
    assert ax3.points == (-5.0, 0.0, 5.0)
    ax4 = discretize_axis(AxisKind.CATEGORICAL, 4, rng)
    assert len(ax4.labels) == 4
    assert sorted(float(l) for l in ax4.labels) == sorted(ax4.points)
    with pytest.raises(ValueError):
        discretize_axis(AxisKind.DISCRETE, 9, rng)


def test_task_space_matches_axes() -> None:
    task = sample_task(11, dim_range=(3, 8))
    space = task.space
    assert space.dimension == task.dimension
    for ax, cfg in zip(task.axes, space.parameters):
        if ax.kind is AxisKind.CONTINUOUS:
            assert cfg.min_value == -5.0 and cfg.max_value == 5.0
        elif ax.kind is AxisKind.DISCRETE:
            assert cfg.values == ax.points
        else:
            assert cfg.categories == ax.labels


# ---------------------------------------------------------------------------
# evaluation

def test_sphere_optimum_at_shift() -> None:
    task = _continuous_task(Family.SPHERE, 3, seed=5)
    assert noiseless_value(task, tuple(task.shift)) == 0.0
    assert noiseless_value(task, tuple(task.shift + 0.5)) < 0.0


def test_linear_slope_affine_in_1d() -> None:
    task = _continuous_task(Family.LINEAR_SLOPE, 1, seed=3, shift=np.array([0.0]))
    xs = np.linspace(-5, 5, 11)
    ys = [noiseless_value(task, (x,)) for x in xs]
    diffs = np.diff(ys)
    assert np.allclose(diffs, diffs[0], atol=1e-9)


def test_gaussian_noise_scale_zero_is_noiseless() -> None:
    base = _continuous_task(Family.SPHERE, 2, seed=9)
    task = BbobTask(
        family=base.family, dimension=2, rotation=np.eye(2), shift=base.shift,
        axes=base.axes, noise=NoiseConfig(NoiseKind.GAUSSIAN_MULT, 0.0), seed=9,
        dim_range=(2, 2), family_names=(base.family.value,),
    )
    rng = np.random.default_rng(0)
    x = (0.5, -1.0)
    assert evaluate(task, x, rng) == noiseless_value(task, x)


@pytest.mark.parametrize("kind", [NoiseKind.GAUSSIAN_MULT, NoiseKind.UNIFORM_MULT])
def test_multiplicative_noise_median(kind: NoiseKind) -> None:
    base = _continuous_task(Family.SPHERE, 2, seed=13, shift=np.zeros(2))
    scale = 0.1
    task = BbobTask(
        family=base.family, dimension=2, rotation=np.eye(2), shift=base.shift,
        axes=base.axes, noise=NoiseConfig(kind, scale), seed=13,
        dim_range=(2, 2), family_names=(base.family.value,),
    )
    x = (1.0, 1.0)  # noiseless value -2
    rng = np.random.default_rng(77)
    vals = [evaluate(task, x, rng) for _ in range(1001)]
    assert abs(float(np.median(vals)) - noiseless_value(task, x)) < scale


def test_cauchy_noise_clipped_and_sparse() -> None:
    base = _continuous_task(Family.SPHERE, 1, seed=15, shift=np.zeros(1))
    scale = 0.5
    task = BbobTask(
        family=base.family, dimension=1, rotation=np.eye(1), shift=base.shift,
        axes=base.axes, noise=NoiseConfig(NoiseKind.CAUCHY_ADD, scale, frequency=0.2), seed=15,
        dim_range=(1, 1), family_names=(base.family.value,),
    )
    rng = np.random.default_rng(3)
    clean = noiseless_value(task, (1.0,))
    vals = np.array([evaluate(task, (1.0,), rng) for _ in range(5000)])
    assert np.abs(vals - clean).max() <= 100.0 * scale + 1e-12
    frac_noisy = float(np.mean(vals != clean))
    assert 0.15 < frac_noisy < 0.25


def test_out_of_domain_rejected() -> None:
    task = _continuous_task(Family.SPHERE, 2, seed=1)
    with pytest.raises(ValueError):
        noiseless_value(task, (6.0, 0.0))
    disc = sample_task(123, dim_range=(1, 1), family_set=(Family.SPHERE,))
    if disc.axes[0].kind is AxisKind.DISCRETE:
        with pytest.raises(ValueError):
            noiseless_value(disc, (0.123,))


def test_unimodal_families_peak_at_shift() -> None:
    for fam in UNIMODAL_AT_SHIFT:
        task = _continuous_task(fam, 1, seed=21, shift=np.array([1.25]))
        grid = np.linspace(-5, 5, 2001)
        vals = [noiseless_value(task, (g,)) for g in grid]
        best = grid[int(np.argmax(vals))]
        cell = 10.0 / 2000
        assert abs(best - 1.25) <= cell + 1e-12


def test_family_assignment() -> None:
    assert set(TRAIN_FAMILIES) | set(TEST_FAMILIES) == set(Family)
    assert not set(TRAIN_FAMILIES) & set(TEST_FAMILIES)


def test_categorical_axis_evaluation_matches_grid_value() -> None:
    rng = np.random.default_rng(2)
    ax = discretize_axis(AxisKind.CATEGORICAL, 3, rng)
    task = BbobTask(
        family=Family.SPHERE, dimension=1, rotation=np.eye(1), shift=np.zeros(1),
        axes=(ax,), noise=NoiseConfig(), seed=0, dim_range=(1, 1),
        family_names=(Family.SPHERE.value,),
    )
    for label, point in zip(ax.labels, ax.points):
        assert noiseless_value(task, (label,)) == pytest.approx(-(point**2))
