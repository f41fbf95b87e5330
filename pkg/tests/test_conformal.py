import numpy as np
import pytest
from scipy import stats

from chcds import (
    CalibrationResult,
    ConformalPredictor,
    Dataset,
    ResponseGrid,
    Scenario,
    adjustment_index,
    calibration_from_scores,
    chcds_calibrate,
    chcds_multiplicative_calibrate,
    chcds_predict,
    generate,
    hpd_split_calibrate,
    mass_below,
    negative_density_calibrate,
    oracle_density,
)
from chcds.dataset import split_dataset


def test_adjustment_index_examples():
    # floor(alpha * (n + 1)) as a 1-based rank.
    assert adjustment_index(0.1, 500) == 50
    assert adjustment_index(0.1, 9) == 1
    assert adjustment_index(0.05, 500) == 25
    assert adjustment_index(0.5, 1) == 1


def test_adjustment_index_too_small_calibration_set():
    with pytest.raises(ValueError, match="too small"):
        adjustment_index(0.1, 8)
    with pytest.raises(ValueError, match="alpha"):
        adjustment_index(0.0, 100)
    with pytest.raises(ValueError, match="alpha"):
        adjustment_index(1.0, 100)


def test_calibration_from_scores_picks_order_statistic():
    scores = np.array([5.0, -1.0, 3.0, 0.5, 2.0, -2.0, 4.0, 1.0, 6.0])
    cal = calibration_from_scores("negative-density", 0.2, scores)
    # rank = floor(0.2 * 10) = 2 -> second smallest score.
    assert cal.adjustment == -1.0
    cal = calibration_from_scores("negative-density", 0.5, scores)
    # rank = floor(0.5 * 10) = 5 -> fifth smallest.
    assert cal.adjustment == 2.0


def test_calibration_result_rejects_unknown_mode():
    with pytest.raises(ValueError, match="unknown calibration mode"):
        CalibrationResult("bogus", 0.1, np.zeros(10), 0.0)


@pytest.fixture(scope="module")
def oracle_setup():
    data = generate(Scenario("mixture", 700, 31))
    _, cal, test = split_dataset(data, 100, 500, 100)
    model = oracle_density("mixture")
    grid = ResponseGrid(*model.response_range, 1024)
    return model, cal, test, grid


def test_additive_scores_formula(oracle_setup):
    model, cal, _, grid = oracle_setup
    calib = chcds_calibrate(model, cal, 0.1, grid)
    assert calib.mode == "additive"
    assert calib.cutoff_level == pytest.approx(0.9)
    # Recompute a few scores by hand: density at the pair minus the
    # 90% density cutoff at that covariate.
    from chcds import hdr_cutoff

    for i in (0, 17, 499):
        cut = hdr_cutoff(model, cal.x[i], 0.9, grid).cutoff
        dens = float(model.evaluate_at(np.array([cal.y[i]]), cal.x[i : i + 1])[0])
        assert calib.scores[i] == pytest.approx(dens - cut, rel=1e-9)
    rank = adjustment_index(0.1, 500)
    assert calib.adjustment == np.sort(calib.scores)[rank - 1]


def test_multiplicative_scores_formula(oracle_setup):
    model, cal, _, grid = oracle_setup
    gamma = 0.05
    calib = chcds_multiplicative_calibrate(model, cal, 0.1, grid, gamma=gamma)
    add = chcds_calibrate(model, cal, 0.1, grid)
    dens = model.evaluate_at(cal.y, cal.x)
    cutoffs = dens - add.scores  # invert the additive formula
    np.testing.assert_allclose(calib.scores, dens / (cutoffs + gamma), rtol=1e-9)
    with pytest.raises(ValueError, match="gamma"):
        chcds_multiplicative_calibrate(model, cal, 0.1, grid, gamma=-0.1)


def test_negative_density_scores_are_raw_densities(oracle_setup):
    model, cal, _, grid = oracle_setup
    calib = negative_density_calibrate(model, cal, 0.1)
    np.testing.assert_allclose(calib.scores, model.evaluate_at(cal.y, cal.x))


def test_hpd_scores_are_mass_below(oracle_setup):
    model, cal, _, grid = oracle_setup
    calib = hpd_split_calibrate(model, cal, 0.1, grid)
    rows = model.evaluate_grid(grid.points, cal.x)
    at_obs = model.evaluate_at(cal.y, cal.x)
    np.testing.assert_allclose(calib.scores, mass_below(rows, grid, at_obs))
    assert (calib.scores >= 0).all() and (calib.scores <= 1 + 1e-9).all()


def test_additive_threshold_can_go_infinite():
    # A large positive adjustment cannot blow up the set, but a negative
    # adjustment below -c(x) must: the threshold hits zero and the set
    # is flagged infinite.
    model = oracle_density("mixture")
    grid = ResponseGrid(*model.response_range, 1024)
    calib = CalibrationResult("additive", 0.1, np.zeros(10), -1.0, cutoff_level=0.9)
    pred = ConformalPredictor(model, grid, 0.1, calib)
    ps = pred.predict([0.0])
    assert ps.infinite
    assert ps.total_length == pytest.approx(grid.length)


def test_multiplicative_threshold_stays_finite():
    model = oracle_density("mixture")
    grid = ResponseGrid(*model.response_range, 1024)
    # Tiny positive adjustment shrinks the threshold but keeps it above
    # zero, so the set stays a finite union of intervals.
    calib = CalibrationResult(
        "multiplicative", 0.1, np.zeros(10), 1e-4, cutoff_level=0.9, gamma=0.0
    )
    pred = ConformalPredictor(model, grid, 0.1, calib)
    ps = pred.predict([0.0])
    assert not ps.infinite
    assert ps.total_length < grid.length


def test_membership_matches_indicators(oracle_setup):
    model, cal, test, grid = oracle_setup
    for make in (
        lambda: chcds_calibrate(model, cal, 0.1, grid),
        lambda: chcds_multiplicative_calibrate(model, cal, 0.1, grid, gamma=0.01),
        lambda: negative_density_calibrate(model, cal, 0.1),
        lambda: hpd_split_calibrate(model, cal, 0.1, grid),
    ):
        pred = ConformalPredictor(model, grid, 0.1, make())
        indicators = pred.coverage_indicators(test.x, test.y)
        for i in range(len(test)):
            ps = pred.predict(test.x[i])
            assert bool(ps.contains(test.y[i : i + 1])[0]) == bool(indicators[i]), (
                pred.calibration.mode,
                i,
            )


def test_unadjusted_predictor_needs_no_calibration(oracle_setup):
    model, _, test, grid = oracle_setup
    pred = ConformalPredictor(model, grid, 0.1, None)
    ps = chcds_predict(pred, test.x[0])
    assert not ps.infinite
    # The unadjusted set is the plain 90% highest-density region.
    from chcds import hdr_cutoff, level_set

    direct = level_set(
        model, test.x[0], hdr_cutoff(model, test.x[0], 0.9, grid).cutoff, grid
    )
    np.testing.assert_allclose(ps.intervals, direct.intervals, atol=1e-12)


def test_hpd_prediction_matches_direct_quadrature():
    # Oracle check on a unimodal scenario: the HPD set from the grid
    # pipeline must match {y: F-central region} computed by quadrature.
    model = oracle_density("linear-gaussian")
    grid = ResponseGrid(*model.response_range, 4096)
    data = generate(Scenario("linear-gaussian", 600, 44))
    _, cal, _ = split_dataset(data, 50, 500, 0)
    calib = hpd_split_calibrate(model, cal, 0.1, grid)
    pred = ConformalPredictor(model, grid, 0.1, calib)
    x0 = np.array([0.8])
    ps = pred.predict(x0)
    assert ps.intervals.shape == (1, 2)
    lo, hi = ps.intervals[0]
    # For a Normal(5 + 2x, sd) density, a density level set is symmetric
    # about the mean and its mass is 2 Phi(half width / sd) - 1. The
    # adjustment is the mass below the cutoff density, so the retained
    # mass should be 1 - adjustment.
    mean, sd = 5.0 + 2.0 * 0.8, 0.8 + 0.05
    assert (lo + hi) / 2 == pytest.approx(mean, abs=2 * grid.spacing)
    retained = stats.norm.cdf(hi, mean, sd) - stats.norm.cdf(lo, mean, sd)
    assert retained == pytest.approx(1.0 - calib.adjustment, abs=1e-3)


def test_hpd_zero_adjustment_keeps_whole_grid():
    model = oracle_density("mixture")
    grid = ResponseGrid(*model.response_range, 1024)
    calib = CalibrationResult("hpd-split", 0.1, np.zeros(10), 0.0)
    pred = ConformalPredictor(model, grid, 0.1, calib)
    ps = pred.predict([0.0])
    # Mass below zero density is zero >= 0 everywhere: whole grid, but a
    # finite set rather than an infinite flag.
    assert not ps.infinite
    assert ps.total_length == pytest.approx(grid.length)


def test_sets_from_density_rows_requires_cutoffs(oracle_setup):
    model, cal, test, grid = oracle_setup
    calib = chcds_calibrate(model, cal, 0.1, grid)
    pred = ConformalPredictor(model, grid, 0.1, calib)
    rows = model.evaluate_grid(grid.points, test.x[:3])
    with pytest.raises(ValueError, match="cutoffs"):
        pred.sets_from_density_rows(rows, None)


def test_shared_rows_path_equals_predict(oracle_setup):
    model, cal, test, grid = oracle_setup
    from chcds import hdr_cutoff_batch

    rows = model.evaluate_grid(grid.points, test.x[:5])
    cutoffs, _, _ = hdr_cutoff_batch(rows, grid, 0.9)
    for make, needs_cutoffs in (
        (lambda: chcds_calibrate(model, cal, 0.1, grid), True),
        (lambda: negative_density_calibrate(model, cal, 0.1), False),
        (lambda: hpd_split_calibrate(model, cal, 0.1, grid), False),
    ):
        pred = ConformalPredictor(model, grid, 0.1, make())
        shared = pred.sets_from_density_rows(rows, cutoffs if needs_cutoffs else None)
        direct = pred.predict_batch(test.x[:5])
        for a, b in zip(shared, direct):
            assert a.infinite == b.infinite
            np.testing.assert_allclose(a.intervals, b.intervals, atol=1e-12)


def test_calibrate_empty_set_rejected(oracle_setup):
    model, cal, _, grid = oracle_setup
    empty = Dataset(np.empty((0, 1)), np.empty(0))
    with pytest.raises(ValueError, match="empty"):
        chcds_calibrate(model, empty, 0.1, grid)


def test_marginal_coverage_on_oracle(oracle_setup):
    # With the true density and exchangeable data, empirical coverage on
    # a modest test set should sit near 0.9; the binomial 3-sigma band
    # at n = 100 is about +-0.09.
    model, cal, test, grid = oracle_setup
    calib = chcds_calibrate(model, cal, 0.1, grid)
    pred = ConformalPredictor(model, grid, 0.1, calib)
    covered = pred.coverage_indicators(test.x, test.y)
    assert 0.81 <= covered.mean() <= 0.99
