import logging
import math

import numpy as np
import pytest

from seqtuner.bbob import (
    AxisKind,
    AxisSpec,
    BbobTask,
    Family,
    NoiseConfig,
    noiseless_value,
    sample_task,
)
from seqtuner.decode import PiecewiseConstDist
from seqtuner.metrics import (
    ZERO_DENSITY_SENTINEL,
    CalibrationReport,
    LikelihoodSummary,
    NormalizationAnchors,
    best_so_far_curve,
    calibration_cdf,
    calibration_report,
    ece,
    estimate_y_rand,
    log_pred_likelihood,
    performance_profile,
    write_metric_table,
)

Q = 1000


def uniform_dist(lo: float = 0.0, hi: float = 1.0) -> PiecewiseConstDist:
    return PiecewiseConstDist((lo, hi), np.full(Q, 1.0 / Q))


def delta_dist(b: int, lo: float = 0.0, hi: float = 1.0) -> PiecewiseConstDist:
    p = np.zeros(Q)
    p[b] = 1.0
    return PiecewiseConstDist((lo, hi), p)


# ---------------------------------------------------------------------------
# best-so-far


def test_best_so_far_running_max() -> None:
    anchors = NormalizationAnchors(y_rand=0.0, y_max=1.0)
    np.testing.assert_allclose(best_so_far_curve([0.2, 0.5, 0.3], anchors), [0.2, 0.5, 0.5])


def test_best_so_far_constant_at_y_rand_is_zero() -> None:
    anchors = NormalizationAnchors(y_rand=3.0, y_max=7.0)
    np.testing.assert_allclose(best_so_far_curve([3.0, 3.0, 3.0], anchors), [0.0, 0.0, 0.0])


def test_best_so_far_hits_one_at_y_max() -> None:
    anchors = NormalizationAnchors(y_rand=-1.0, y_max=2.0)
    np.testing.assert_allclose(best_so_far_curve([2.0], anchors), [1.0])


def test_best_so_far_clamps_and_warns_above_y_max(caplog) -> None:
    anchors = NormalizationAnchors(y_rand=0.0, y_max=1.0)
    with caplog.at_level(logging.WARNING, logger="seqtuner.metrics"):
        curve = best_so_far_curve([0.5, 2.0], anchors)
    np.testing.assert_allclose(curve, [0.5, 1.0])
    assert any("clamping" in r.message for r in caplog.records)


def test_best_so_far_degenerate_anchors_raise() -> None:
    with pytest.raises(ValueError):
        best_so_far_curve([0.1], NormalizationAnchors(y_rand=1.0, y_max=1.0))


def test_best_so_far_is_monotone() -> None:
    rng = np.random.default_rng(0)
    anchors = NormalizationAnchors(y_rand=0.0, y_max=1.0)
    for _ in range(25):
        curve = best_so_far_curve(rng.normal(size=40), anchors)
        assert (np.diff(curve) >= 0).all()


# ---------------------------------------------------------------------------
# y_rand estimation


def constant_task() -> BbobTask:
    # one discrete axis with a single feasible point makes the objective constant
    return BbobTask(
        family=Family.SPHERE,
        dimension=1,
        rotation=np.eye(1),
        shift=np.array([0.5]),
        axes=(AxisSpec(AxisKind.DISCRETE, points=(2.0,)),),
        noise=NoiseConfig(),
        seed=0,
        dim_range=(1, 1),
        family_names=("sphere",),
    )


def test_estimate_y_rand_constant_function() -> None:
    task = constant_task()
    got = estimate_y_rand(task, n_samples=50, rng=np.random.default_rng(1))
    assert got == -(2.0 - 0.5) ** 2


def test_estimate_y_rand_linear_slope_median_is_midpoint_value() -> None:
    task = sample_task(
        7, dim_range=(1, 1), family_set=(Family.LINEAR_SLOPE,),
        force_continuous=True, forced_noise="none",
    )
    analytic = noiseless_value(task, (0.0,))  # objective is monotone in x
    got = estimate_y_rand(task, n_samples=10000, rng=np.random.default_rng(2))
    # sample-median error ~ 1/(2 f sqrt(n)) with f = 0.1 on a width-10 range
    assert abs(got - analytic) <= 0.2


def test_estimate_y_rand_seed_repeatable() -> None:
    task = sample_task(3, dim_range=(2, 3), family_set=(Family.SPHERE,))
    a = estimate_y_rand(task, n_samples=200, rng=np.random.default_rng(5))
    b = estimate_y_rand(task, n_samples=200, rng=np.random.default_rng(5))
    assert a == b
    with pytest.raises(ValueError):
        estimate_y_rand(task, n_samples=0)


# ---------------------------------------------------------------------------
# log predictive likelihood


def test_likelihood_uniform_predictor_is_exactly_zero() -> None:
    out = log_pred_likelihood(lambda ctx, x: uniform_dist(), [[(None, (0.1,), 0.37)]])
    assert out.mean == 0.0
    assert out.stderr == 0.0
    assert out.n_zero_density == 0 and out.n_total == 1


def test_likelihood_delta_predictor_is_log_q() -> None:
    out = log_pred_likelihood(lambda ctx, x: delta_dist(370), [[(None, (0.1,), 0.3705)]])
    assert out.mean == pytest.approx(math.log(1000), abs=1e-12)


def test_likelihood_zero_density_uses_sentinel_and_counts() -> None:
    out = log_pred_likelihood(lambda ctx, x: delta_dist(0), [[(None, (0.1,), 0.75)]])
    assert out.mean == ZERO_DENSITY_SENTINEL
    assert out.n_zero_density == 1


def test_likelihood_stderr_across_groups() -> None:
    def predictor(ctx, x):
        return uniform_dist() if ctx == "a" else delta_dist(500)

    groups = [[("a", (0.0,), 0.2)], [("b", (0.0,), 0.5005)]]
    out = log_pred_likelihood(predictor, groups)
    d = math.log(1000)
    assert out.mean == pytest.approx(d / 2)
    assert out.stderr == pytest.approx(d / 2)  # std(ddof=1)/sqrt(2) for two points
    with pytest.raises(ValueError):
        log_pred_likelihood(predictor, [])


# ---------------------------------------------------------------------------
# ECE


def conf_dist(k: int, conf: float) -> PiecewiseConstDist:
    p = np.full(100, (1.0 - conf) / 99)
    p[k] = conf
    return PiecewiseConstDist((0.0, 1.0), p)


def test_ece_single_confidence_bin_definition() -> None:
    dists = [conf_dist(50, 0.9) for _ in range(10)]
    ys = [0.505] * 6 + [0.105] * 4  # 6 land in the argmax interval
    assert ece(dists, ys) == pytest.approx(30.0, abs=1e-9)


def test_ece_all_mass_on_correct_class_is_zero() -> None:
    dists = [delta_dist(10 * k + 3) for k in range(8)]
    ys = [(10 * k + 3 + 0.5) / Q for k in range(8)]
    assert ece(dists, ys) == 0.0


def test_ece_of_true_sampling_distribution_is_small() -> None:
    rng = np.random.default_rng(11)
    p = rng.random(Q)
    p /= p.sum()
    dist = PiecewiseConstDist((-2.0, 3.0), p)
    n = 20000
    ys = [dist.sample(rng) for _ in range(n)]
    assert ece([dist] * n, ys) <= 1.0


def test_ece_input_validation() -> None:
    with pytest.raises(ValueError):
        ece([], [])
    with pytest.raises(ValueError):
        ece([uniform_dist()], [2.0])
    with pytest.raises(ValueError):
        ece([uniform_dist()], [0.1, 0.2])


# ---------------------------------------------------------------------------
# calibration CDF


def test_calibration_cdf_self_samples_hug_the_diagonal() -> None:
    rng = np.random.default_rng(12)
    p = rng.random(Q)
    p /= p.sum()
    dist = PiecewiseConstDist((0.0, 4.0), p)
    n = 4000
    ys = [dist.sample(rng) for _ in range(n)]
    f, grid, cumulative, sup = calibration_cdf([dist] * n, ys)
    assert f.shape == (n,) and (f >= 0).all() and (f <= 1).all()
    assert (np.diff(cumulative) >= 0).all()
    assert sup <= 0.035


def test_calibration_cdf_point_truth_at_center_gives_half() -> None:
    dist = uniform_dist()
    f, _, _, _ = calibration_cdf([dist] * 5, [0.5] * 5)
    np.testing.assert_allclose(f, 0.5, atol=1e-12)  # cumsum roundoff only


def test_calibration_cdf_empty_input() -> None:
    f, grid, cumulative, sup = calibration_cdf([], [])
    assert f.size == 0 and cumulative.size == 0 and sup == 0.0
    assert grid[0] == 0.0 and grid[-1] == 1.0


def test_calibration_report_bundles_and_validates() -> None:
    rng = np.random.default_rng(13)
    dist = uniform_dist()
    ys = [dist.sample(rng) for _ in range(500)]
    rep = calibration_report([dist] * 500, ys)
    assert 0.0 <= rep.ece <= 100.0
    assert rep.cdf_values.shape == (500,)
    assert rep.sup_deviation <= 0.1
    with pytest.raises(ValueError):
        CalibrationReport(
            ece=150.0, cdf_values=np.array([0.5]), grid=np.array([0.0]),
            cumulative=np.array([1.0]), sup_deviation=0.0,
        )


# ---------------------------------------------------------------------------
# performance profiles


def hand_results() -> dict:
    return {
        "m1": [[0.0, 0.5, 1.0], [0.2, 0.3, 0.3], [0.9, 0.9, 0.9]],
        "m2": [[1.0, 1.0, 1.0], [0.0, 0.1, 0.4], [0.5, 0.85, 0.85]],
    }


def test_performance_profile_hand_computation() -> None:
    out = performance_profile(hand_results(), threshold_rule="best90")
    # thresholds: 0.9, 0.36, 0.81
    np.testing.assert_allclose(out["m1"], [1 / 3, 1 / 3, 2 / 3])
    np.testing.assert_allclose(out["m2"], [1 / 3, 2 / 3, 1.0])


def test_performance_profile_median_rule_and_callable() -> None:
    out = performance_profile(hand_results(), threshold_rule="median")
    # thresholds: 1.0, 0.35, 0.875; task 3 is solved by m1 from trial 1
    np.testing.assert_allclose(out["m1"], [1 / 3, 1 / 3, 2 / 3])
    np.testing.assert_allclose(out["m2"], [1 / 3, 1 / 3, 2 / 3])
    fixed = performance_profile(hand_results(), threshold_rule=lambda vals: -1.0)
    np.testing.assert_allclose(fixed["m1"], [1.0, 1.0, 1.0])


def test_performance_profile_constant_extremes() -> None:
    res = {"good": [[5.0, 5.0], [4.0, 4.0]], "bad": [[-1.0, -1.0], [-2.0, -2.0]]}
    out = performance_profile(res)
    np.testing.assert_allclose(out["good"], [1.0, 1.0])
    np.testing.assert_allclose(out["bad"], [0.0, 0.0])


def test_performance_profile_task_order_invariance() -> None:
    res = hand_results()
    perm = {m: [cs[i] for i in (2, 0, 1)] for m, cs in res.items()}
    a = performance_profile(res)
    b = performance_profile(perm)
    for m in a:
        np.testing.assert_allclose(a[m], b[m])


def test_performance_profile_monotone_for_monotone_curves() -> None:
    rng = np.random.default_rng(14)
    res = {
        m: [np.maximum.accumulate(rng.random(30)).tolist() for _ in range(6)]
        for m in ("a", "b", "c")
    }
    for curve in performance_profile(res).values():
        assert (np.diff(curve) >= -1e-15).all()


def test_performance_profile_validation() -> None:
    with pytest.raises(ValueError):
        performance_profile({"a": [[1.0]], "b": [[1.0], [1.0]]})
    with pytest.raises(ValueError):
        performance_profile({"a": [[1.0, 2.0]], "b": [[1.0]]})
    with pytest.raises(ValueError):
        performance_profile(hand_results(), threshold_rule="p99")
    with pytest.raises(ValueError):
        performance_profile({})


# ---------------------------------------------------------------------------
# table output


def test_write_metric_table_fixed_text(tmp_path) -> None:
    path = tmp_path / "curve.tsv"
    curves = [[0.1, 0.5, 0.5], [0.3, 0.3, 0.9]]
    write_metric_table(str(path), curves)
    first = path.read_bytes()
    write_metric_table(str(path), curves)
    assert path.read_bytes() == first
    lines = first.decode().splitlines()
    assert lines[0] == "trial\tmean\tstd"
    assert len(lines) == 4
    assert lines[1].split("\t")[1] == "0.20000000000000001"
    with pytest.raises(ValueError):
        write_metric_table(str(path), [0.1, 0.2])
