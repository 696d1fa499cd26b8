"""Tokenizer tests: quantization, layout, metadata fidelity, augmentations."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seqtuner.core import (
    Goal,
    Metadata,
    ParamKind,
    ParameterConfig,
    Scale,
    SearchSpace,
    Study,
    Trial,
    normalize_param,
)
from seqtuner.tokenizer import (
    INFERENCE_AFFINE,
    DropMask,
    Vocab,
    YAffine,
    apply_y_affine,
    build_loss_weights,
    dequantize,
    detokenize_trial,
    effective_y_range,
    format_number,
    parse_metadata,
    quantize,
    quantize_y,
    render_tokens,
    serialize_history,
    serialize_metadata,
    tokenize_study,
)

V = Vocab()


def table1_study() -> Study:
    space = SearchSpace(
        (
            ParameterConfig("opt_kw.lr", ParamKind.DOUBLE, min_value=1e-6, max_value=1e-2, scale=Scale.LOG),
            ParameterConfig("opt_type", ParamKind.CATEGORICAL, categories=("SGD", "Adam")),
        )
    )
    meta = Metadata(
        name="convnet on cifar10",
        metric_name="accuracy",
        goal=Goal.MAXIMIZE,
        algorithm="random_search",
        space=space,
    )
    return Study(
        meta,
        (
            Trial((0.0021237573, "SGD"), 0.69482429),
            Trial((0.00038292234, "Adam"), 0.71642583),
        ),
    )


# ---------------------------------------------------------------------------
# quantization

def test_quantize_frozen_examples() -> None:
    assert quantize(0.12345, 1000) == 123
    assert quantize(1.0, 1000) == 999
    assert quantize(0.0, 1000) == 0


def test_quantize_rejects_out_of_range() -> None:
    with pytest.raises(ValueError):
        quantize(-0.01, 1000)
    with pytest.raises(ValueError):
        quantize(1.01, 1000)


def test_dequantize_midpoints() -> None:
    assert dequantize(0, 1000) == 0.0005
    assert dequantize(999, 1000) == 0.9995
    assert dequantize(123, 1000) == 0.1235
    with pytest.raises(ValueError):
        dequantize(1000, 1000)


@given(st.integers(min_value=0, max_value=999))
def test_dequantize_quantize_identity(b: int) -> None:
    assert quantize(dequantize(b, 1000), 1000) == b


@given(st.floats(min_value=0.0, max_value=1.0), st.integers(min_value=2, max_value=5000))
def test_quantize_in_range(u: float, Q: int) -> None:
    assert 0 <= quantize(u, Q) < Q


# ---------------------------------------------------------------------------
# y affine

def test_y_affine_examples() -> None:
    a = YAffine(s=0.6, c=0.2)
    assert apply_y_affine(0.5, a) == pytest.approx(0.5)
    assert apply_y_affine(1.0, a) == pytest.approx(0.8)
    assert quantize(apply_y_affine(1.0, a), 1000) == 800
    assert apply_y_affine(0.0, a) == pytest.approx(0.2)


def test_y_affine_validation() -> None:
    with pytest.raises(ValueError):
        YAffine(s=0.6, c=0.5)
    with pytest.raises(ValueError):
        YAffine(s=0.0, c=0.1)


def test_effective_y_range_inverts_affine() -> None:
    y_range = (2.0, 6.0)
    lo, hi = effective_y_range(y_range, INFERENCE_AFFINE)
    # width 4 squeezed into [0.2, 0.8] leaves a third of the width on each side
    assert lo == pytest.approx(2.0 - 4.0 / 3.0)
    assert hi == pytest.approx(6.0 + 4.0 / 3.0)
    # a value quantized with the affine detokenizes near itself via the
    # widened range
    for y in (2.0, 3.7, 6.0):
        b = quantize_y(y, y_range, INFERENCE_AFFINE, 1000)
        back = lo + dequantize(b, 1000) * (hi - lo)
        assert back == pytest.approx(y, abs=(hi - lo) / 1000)


# ---------------------------------------------------------------------------
# table-1 study serialization

def test_table1_history_tokens() -> None:
    ts = tokenize_study(table1_study())
    assert list(ts.history_tokens) == [831, 0, V.star, 0, V.pipe, 645, 1, V.star, 999]
    assert render_tokens(ts.history_tokens) == "<831><0>*<0>|<645><1>*<999>"


def test_table1_metadata_text() -> None:
    ts = tokenize_study(table1_study())
    expected = (
        '<name>:"convnet on cifar10",<metric>:"accuracy",<goal>:<MAXIMIZE>,'
        '<algorithm>:"random_search"'
        '&<name>:"opt_kw.lr",<type>:<DOUBLE>,<min_value>:1e-6,<max_value>:1e-2,'
        "<scale_type>:<LOG>"
        '&<name>:"opt_type",<type>:<CATEGORICAL>,<categories>:["SGD", "Adam"]'
    )
    assert render_tokens(ts.meta_tokens) == expected


def test_single_param_block_count() -> None:
    space = SearchSpace((ParameterConfig("a", ParamKind.DOUBLE, min_value=0.0, max_value=1.0),))
    meta = Metadata("s", "m", Goal.MAXIMIZE, "", space)
    toks = serialize_metadata(meta)
    assert toks.count(V.amp) == 1


def test_detokenize_table1_first_trial() -> None:
    study = table1_study()
    ts = tokenize_study(study)
    trial = detokenize_trial(ts.history_tokens[:5], study.metadata.space, ts.y_range)
    lr, opt = trial.x
    assert opt == "SGD"
    assert lr == pytest.approx(2.13e-3, rel=1e-2)
    # one-bin quantization error bound in normalized (log) space
    err = abs(normalize_param(lr, study.metadata.space[0]) - normalize_param(0.0021237573, study.metadata.space[0]))
    assert err <= 1.0 / V.Q


def test_detokenize_rejects_bad_category_bin() -> None:
    study = table1_study()
    tokens = [831, 2, V.star, 0]
    with pytest.raises(ValueError):
        detokenize_trial(tokens, study.metadata.space, (0.0, 1.0))


def test_degenerate_y_range_bin_zero() -> None:
    space = SearchSpace((ParameterConfig("a", ParamKind.DOUBLE, min_value=0.0, max_value=1.0),))
    hist = serialize_history([Trial((0.5,), 3.0)], space, (3.0, 3.0))
    assert hist == [500, V.star, 0]


def test_empty_history_empty_tokens() -> None:
    space = SearchSpace((ParameterConfig("a", ParamKind.DOUBLE, min_value=0.0, max_value=1.0),))
    assert serialize_history([], space, (0.0, 1.0)) == []


def test_layout_token_count() -> None:
    study = table1_study()
    ts = tokenize_study(study)
    D, t = 2, 2
    assert len(ts.history_tokens) == (D + 3) * t - 1


def test_loss_weights_zero_exactly_at_separators() -> None:
    ts = tokenize_study(table1_study())
    w = build_loss_weights(ts.history_tokens)
    for tok, wi in zip(ts.history_tokens, w):
        assert wi == (0.0 if tok in (V.star, V.pipe) else 1.0)


# ---------------------------------------------------------------------------
# permutation and augmentation

def test_permutation_consistency() -> None:
    study = table1_study()
    ts = tokenize_study(study, perm=(1, 0))
    # categorical first now
    assert list(ts.history_tokens[:4]) == [0, 831, V.star, 0]
    # un-permuting the per-trial x tokens reproduces the identity serialization
    ident = tokenize_study(study)
    t0 = list(ts.history_tokens[:2])
    assert [t0[1], t0[0]] == list(ident.history_tokens[:2])
    # detokenize with the same perm recovers the right assignment
    trial = detokenize_trial(ts.history_tokens[:4], study.metadata.space, ts.y_range, perm=(1, 0))
    assert trial.x[1] == "SGD"


def test_metadata_permutation_applies_to_blocks() -> None:
    study = table1_study()
    text = render_tokens(serialize_metadata(study.metadata, perm=(1, 0)))
    assert text.index("opt_type") < text.index("opt_kw.lr")


def test_drop_mask_keeps_types_and_algorithm() -> None:
    study = table1_study()
    rng = np.random.default_rng(7)
    for _ in range(2):
        mask = DropMask(drop_text=bool(rng.integers(2)), drop_ranges=bool(rng.integers(2)))
        toks = serialize_metadata(study.metadata, mask)
        parsed = parse_metadata(toks)
        assert parsed.algorithm == "random_search"
        assert [p.kind for p in parsed.space] == [ParamKind.DOUBLE, ParamKind.CATEGORICAL]


def test_minimal_metadata_drops_text_and_ranges() -> None:
    study = table1_study()
    text = render_tokens(serialize_metadata(study.metadata, DropMask.minimal()))
    assert "cifar10" not in text and "1e-6" not in text and "SGD" not in text
    assert "<DOUBLE>" in text and "<CATEGORICAL>" in text and "random_search" in text


def test_parse_back_full_fidelity() -> None:
    study = table1_study()
    parsed = parse_metadata(serialize_metadata(study.metadata))
    assert parsed.name == study.metadata.name
    assert parsed.metric_name == study.metadata.metric_name
    assert parsed.goal is Goal.MAXIMIZE
    assert [p.name for p in parsed.space] == ["opt_kw.lr", "opt_type"]
    assert parsed.space[0].min_value == 1e-6
    assert parsed.space[0].max_value == 1e-2
    assert parsed.space[0].scale is Scale.LOG
    assert parsed.space[1].categories == ("SGD", "Adam")


def test_parse_back_free_text_and_discrete() -> None:
    space = SearchSpace(
        (
            ParameterConfig("units", ParamKind.DISCRETE, values=(32.0, 64.0, 128.0)),
            ParameterConfig("n", ParamKind.INTEGER, min_value=1, max_value=10),
        )
    )
    meta = Metadata("mlp", "auc", Goal.MINIMIZE, "gp_ucb", space, free_text="tuning a small mlp")
    parsed = parse_metadata(serialize_metadata(meta))
    assert parsed.free_text == "tuning a small mlp"
    assert parsed.space[0].values == (32.0, 64.0, 128.0)
    assert parsed.space[1].kind is ParamKind.INTEGER
    assert parsed.goal is Goal.MINIMIZE


# ---------------------------------------------------------------------------
# number formatting

def test_format_number() -> None:
    assert format_number(1e-6) == "1e-6"
    assert format_number(1e-2) == "1e-2"
    assert format_number(0.1) == "0.1"
    assert format_number(5.0) == "5.0"
    assert format_number(-5.0) == "-5.0"
    assert format_number(0.023) == "0.023"
    assert format_number(1.5e20) == "1.5e20"


# ---------------------------------------------------------------------------
# fuzzed round trips

def _random_space(rng: np.random.Generator, max_dim: int = 4) -> SearchSpace:
    D = int(rng.integers(1, max_dim + 1))
    params = []
    for d in range(D):
        kind = rng.choice(["DOUBLE", "INTEGER", "DISCRETE", "CATEGORICAL"])
        if kind == "DOUBLE":
            if rng.integers(2):
                lo = 10.0 ** rng.uniform(-8, 2)
                hi = lo * 10.0 ** rng.uniform(0.5, 6)
                params.append(
                    ParameterConfig(f"p{d}", ParamKind.DOUBLE, min_value=lo, max_value=hi, scale=Scale.LOG)
                )
            else:
                lo = rng.uniform(-100, 100)
                params.append(
                    ParameterConfig(f"p{d}", ParamKind.DOUBLE, min_value=lo, max_value=lo + rng.uniform(0.1, 200))
                )
        elif kind == "INTEGER":
            lo = int(rng.integers(-50, 50))
            params.append(
                ParameterConfig(f"p{d}", ParamKind.INTEGER, min_value=lo, max_value=lo + int(rng.integers(1, 2000)))
            )
        elif kind == "DISCRETE":
            n = int(rng.integers(2, 9))
            vals = np.sort(rng.uniform(-10, 10, size=n))
            vals = np.unique(vals)
            params.append(ParameterConfig(f"p{d}", ParamKind.DISCRETE, values=tuple(vals)))
        else:
            n = int(rng.integers(2, 9))
            params.append(ParameterConfig(f"p{d}", ParamKind.CATEGORICAL, categories=tuple(f"c{i}" for i in range(n))))
    return SearchSpace(tuple(params))


def _random_study(rng: np.random.Generator, space: SearchSpace, n_trials: int) -> Study:
    from seqtuner.core import space_sample_uniform

    trials = tuple(Trial(space_sample_uniform(space, rng), float(rng.normal())) for _ in range(n_trials))
    meta = Metadata("fuzz", "m", Goal.MAXIMIZE, "random_search", space)
    return Study(meta, trials)


def test_fuzzed_round_trip_small() -> None:
    rng = np.random.default_rng(123)
    for _ in range(200):
        space = _random_space(rng)
        study = _random_study(rng, space, int(rng.integers(1, 6)))
        ts = tokenize_study(study)
        D = space.dimension
        stride = D + 3
        for t_index, trial in enumerate(study.trials):
            start = t_index * stride
            chunk = ts.history_tokens[start : start + D + 2]
            back = detokenize_trial(chunk, space, ts.y_range)
            for cfg, orig, rec in zip(space.parameters, trial.x, back.x):
                if cfg.kind in (ParamKind.DOUBLE, ParamKind.INTEGER):
                    err = abs(normalize_param(rec, cfg) - normalize_param(orig, cfg))
                    assert err <= 1.0 / V.Q + 1e-12
                else:
                    assert rec == orig


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_tokenize_layout_property(seed: int) -> None:
    rng = np.random.default_rng(seed)
    space = _random_space(rng)
    study = _random_study(rng, space, int(rng.integers(0, 5)))
    ts = tokenize_study(study)
    t, D = len(study.trials), space.dimension
    assert len(ts.history_tokens) == max((D + 3) * t - 1, 0)
    # windows end [*, y, |] except the last
    for k in range(t):
        base = k * (D + 3)
        assert ts.history_tokens[base + D] == V.star
        if k < t - 1:
            assert ts.history_tokens[base + D + 2] == V.pipe
