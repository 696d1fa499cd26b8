"""Core type and normalization tests."""
from __future__ import annotations

import math

import pytest
from hypothesis import given, strategies as st

from seqtuner.core import (
    Goal,
    Metadata,
    ParamKind,
    ParameterConfig,
    Scale,
    SearchSpace,
    Study,
    Trial,
    denormalize_param,
    normalize_param,
    set_index,
    set_value,
    space_sample_uniform,
    to_maximize,
)

LR = ParameterConfig("lr", ParamKind.DOUBLE, min_value=1e-6, max_value=1e-2, scale=Scale.LOG)


def test_linear_normalize_quarter() -> None:
    cfg = ParameterConfig("a", ParamKind.DOUBLE, min_value=0.0, max_value=10.0)
    assert normalize_param(2.5, cfg) == pytest.approx(0.25, abs=0)


def test_log_normalize_frozen_values() -> None:
    # frozen oracle: (6 + log10(x)) / 4, computed by hand for the two lr values
    assert normalize_param(0.0021237573, LR) == pytest.approx(0.8317762212, abs=1e-9)
    assert normalize_param(0.00038292234, LR) == pytest.approx(0.6457776760, abs=1e-9)


def test_denormalize_boundaries() -> None:
    assert denormalize_param(0.0, LR) == LR.min_value
    assert denormalize_param(1.0, LR) == LR.max_value


def test_denormalize_log_mid() -> None:
    # frozen oracle: 10 ** (4*0.8318 - 6)
    assert denormalize_param(0.8318, LR) == pytest.approx(2.124222477388697e-3, rel=1e-9)
    assert denormalize_param(0.8318, LR) == pytest.approx(2.12e-3, rel=5e-3)


def test_out_of_domain_raises() -> None:
    with pytest.raises(ValueError):
        normalize_param(2e-2, LR)
    with pytest.raises(ValueError):
        denormalize_param(1.5, LR)


def test_integer_round_trip_rounds() -> None:
    cfg = ParameterConfig("n", ParamKind.INTEGER, min_value=1, max_value=9)
    u = normalize_param(4, cfg)
    assert denormalize_param(u, cfg) == 4.0
    assert denormalize_param(0.49, cfg) == 5.0  # nearest integer


def test_set_index_and_value() -> None:
    cat = ParameterConfig("c", ParamKind.CATEGORICAL, categories=("SGD", "Adam"))
    assert set_index("Adam", cat) == 1
    assert set_value(0, cat) == "SGD"
    disc = ParameterConfig("d", ParamKind.DISCRETE, values=(0.1, 0.2, 0.4))
    assert set_index(0.2, disc) == 1
    assert normalize_param(0.4, disc) == 2
    assert normalize_param(0.4, disc, set_as_unit=True) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        set_value(3, disc)


def test_config_validation() -> None:
    with pytest.raises(ValueError):
        ParameterConfig("bad", ParamKind.DOUBLE, min_value=1.0, max_value=0.0)
    with pytest.raises(ValueError):
        ParameterConfig("bad", ParamKind.DOUBLE, min_value=-1.0, max_value=1.0, scale=Scale.LOG)
    with pytest.raises(ValueError):
        ParameterConfig("bad", ParamKind.DISCRETE, values=(0.2, 0.1))
    with pytest.raises(ValueError):
        ParameterConfig("bad", ParamKind.CATEGORICAL, categories=("a", "a"))
    with pytest.raises(ValueError):
        SearchSpace((LR, LR))


def test_study_validates_trials() -> None:
    space = SearchSpace((LR,))
    meta = Metadata("s", "m", Goal.MAXIMIZE, "random_search", space)
    Study(meta, (Trial((1e-3,), 0.5),))
    with pytest.raises(ValueError):
        Study(meta, (Trial((2e-2,), 0.5),))
    with pytest.raises(ValueError):
        Metadata("s", "m", Goal.MAXIMIZE, "not_a_policy", space)


def test_to_maximize_negates() -> None:
    space = SearchSpace((LR,))
    meta = Metadata("s", "loss", Goal.MINIMIZE, "", space)
    study = Study(meta, (Trial((1e-3,), 0.25), Trial((1e-4,), 0.75)))
    flipped = to_maximize(study)
    assert flipped.metadata.goal is Goal.MAXIMIZE
    assert [t.y for t in flipped.trials] == [-0.25, -0.75]
    assert to_maximize(flipped) is flipped


@given(
    st.floats(min_value=-100.0, max_value=100.0),
    st.floats(min_value=1e-6, max_value=100.0),
    st.floats(min_value=0.0, max_value=1.0),
)
def test_round_trip_linear(lo: float, width: float, u: float) -> None:
    cfg = ParameterConfig("a", ParamKind.DOUBLE, min_value=lo, max_value=lo + width)
    x = denormalize_param(u, cfg)
    back = denormalize_param(normalize_param(x, cfg), cfg)
    assert abs(back - x) <= 1e-9 * width


@given(
    st.floats(min_value=-8.0, max_value=4.0),
    st.floats(min_value=0.1, max_value=8.0),
    st.floats(min_value=0.0, max_value=1.0),
)
def test_round_trip_log(log_lo: float, log_width: float, u: float) -> None:
    cfg = ParameterConfig(
        "a", ParamKind.DOUBLE, min_value=10**log_lo, max_value=10 ** (log_lo + log_width), scale=Scale.LOG
    )
    x = denormalize_param(u, cfg)
    back = denormalize_param(normalize_param(x, cfg), cfg)
    assert back == pytest.approx(x, rel=1e-9)


@given(st.floats(min_value=0.0, max_value=1.0), st.floats(min_value=0.0, max_value=1.0))
def test_normalize_monotone(u1: float, u2: float) -> None:
    x1, x2 = denormalize_param(u1, LR), denormalize_param(u2, LR)
    if x1 < x2:
        assert normalize_param(x1, LR) <= normalize_param(x2, LR)
    # strictly increasing once inputs are separated beyond float round-off
    if min(u1, u2) + 1e-9 < max(u1, u2):
        lo_x, hi_x = min(x1, x2), max(x1, x2)
        assert normalize_param(lo_x, LR) < normalize_param(hi_x, LR)


def test_space_sample_uniform_in_domain() -> None:
    import numpy as np

    space = SearchSpace(
        (
            LR,
            ParameterConfig("n", ParamKind.INTEGER, min_value=0, max_value=5),
            ParameterConfig("c", ParamKind.CATEGORICAL, categories=("a", "b")),
        )
    )
    rng = np.random.default_rng(0)
    for _ in range(100):
        x = space_sample_uniform(space, rng)
        for cfg, v in zip(space.parameters, x):
            assert cfg.contains(v)
