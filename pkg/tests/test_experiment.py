import numpy as np
import pytest

from chcds import (
    ConformalPredictor,
    ExperimentConfig,
    ResponseGrid,
    Scenario,
    adjustment_curve,
    chcds_calibrate,
    chcds_multiplicative_calibrate,
    generate,
    hpd_split_calibrate,
    negative_density_calibrate,
    oracle_density,
    run_experiment,
    run_replicate,
)
from chcds.dataset import split_dataset
from chcds.experiment import _fit_estimator, _replicate_seeds


SMALL = ExperimentConfig(
    scenario="mixture",
    methods=("chcds", "chcds-mult", "neg-density", "hpd-split", "unadjusted"),
    estimator="oracle",
    n_train=50,
    n_cal=200,
    n_test=20,
    replicates=8,
    seed=123,
    grid_points=512,
)


def test_replicate_seeds_are_order_free_and_distinct():
    a = _replicate_seeds(0, 0)
    b = _replicate_seeds(0, 1)
    assert a != b
    assert _replicate_seeds(0, 1) == b  # pure function of (seed, index)
    assert _replicate_seeds(1, 0) != a


def test_run_replicate_is_deterministic():
    rec1 = run_replicate(SMALL, 3)
    rec2 = run_replicate(SMALL, 3)
    for method in SMALL.methods:
        assert rec1[method].report.coverage == rec2[method].report.coverage
        assert rec1[method].report.mean_size == rec2[method].report.mean_size
        if method != "unadjusted":
            assert rec1[method].adjustment == rec2[method].adjustment


def test_replicate_matches_public_calibration_api():
    # The harness shares density rows across methods; its calibration
    # numbers must equal what the public per-method functions produce.
    config = SMALL
    r = 5
    data_seed, fit_seed = _replicate_seeds(config.seed, r)
    total = config.n_train + config.n_cal + config.n_test
    data = generate(Scenario(config.scenario, total, data_seed))
    train, cal, test = split_dataset(
        data, config.n_train, config.n_cal, config.n_test
    )
    model = _fit_estimator(config, train, fit_seed)
    grid = ResponseGrid(*model.response_range, config.grid_points)

    records = run_replicate(config, r)
    direct = {
        "chcds": chcds_calibrate(model, cal, config.alpha, grid),
        "chcds-mult": chcds_multiplicative_calibrate(
            model, cal, config.alpha, grid, gamma=config.gamma
        ),
        "neg-density": negative_density_calibrate(model, cal, config.alpha),
        "hpd-split": hpd_split_calibrate(model, cal, config.alpha, grid),
    }
    for method, calib in direct.items():
        assert records[method].adjustment == pytest.approx(
            calib.adjustment, rel=1e-12
        )

    # And the evaluation must match predicting through the public path.
    from chcds import evaluate
    from chcds.datagen import covariate_range

    pred = ConformalPredictor(model, grid, config.alpha, direct["chcds"])
    sets = pred.predict_batch(test.x)
    report = evaluate(
        sets, test, config.alpha, bins=config.bins,
        x_range=covariate_range(config.scenario),
    )
    assert records["chcds"].report.coverage == pytest.approx(report.coverage)
    assert records["chcds"].report.mean_size == pytest.approx(report.mean_size)


def test_run_experiment_aggregates_and_reproduces():
    res1 = run_experiment(SMALL)
    res2 = run_experiment(SMALL)
    for method in SMALL.methods:
        s1, s2 = res1.methods[method], res2.methods[method]
        np.testing.assert_array_equal(s1.coverage, s2.coverage)
        np.testing.assert_array_equal(s1.mean_size, s2.mean_size)
        assert s1.coverage.shape == (SMALL.replicates,)
        assert s1.coverage_mean == pytest.approx(s1.coverage.mean())
        assert s1.size_mean == pytest.approx(s1.mean_size.mean())
        expected_se = s1.coverage.std(ddof=1) / np.sqrt(SMALL.replicates)
        assert s1.coverage_se == pytest.approx(expected_se)
        total = s1.bin_counts.sum()
        assert total == SMALL.replicates * SMALL.n_test
    assert res1.failures == []


def test_workers_do_not_change_results():
    seq = run_experiment(SMALL)
    par = run_experiment(
        ExperimentConfig(**{**SMALL.__dict__, "workers": 2})
    )
    for method in SMALL.methods:
        np.testing.assert_array_equal(
            seq.methods[method].coverage, par.methods[method].coverage
        )
        np.testing.assert_array_equal(
            seq.methods[method].mean_size, par.methods[method].mean_size
        )


def test_failure_policy_aborts_above_one_percent():
    # A calibration set below the alpha = 0.1 minimum of 9 points makes
    # every replicate raise during calibration.
    bad = ExperimentConfig(
        scenario="mixture",
        methods=("chcds",),
        estimator="oracle",
        n_train=20,
        n_cal=8,
        n_test=5,
        replicates=5,
        seed=0,
        grid_points=128,
    )
    with pytest.raises(RuntimeError, match="policy allows at most 1%"):
        run_experiment(bad)


def test_config_validation():
    with pytest.raises(ValueError, match="scenario"):
        ExperimentConfig(scenario="nope")
    with pytest.raises(ValueError, match="method"):
        ExperimentConfig(scenario="mixture", methods=("nope",))
    with pytest.raises(ValueError, match="estimator"):
        ExperimentConfig(scenario="mixture", estimator="nope")
    with pytest.raises(ValueError, match="alpha"):
        ExperimentConfig(scenario="mixture", alpha=1.5)


def test_working_level_defaults_and_override():
    cfg = ExperimentConfig(scenario="mixture", alpha=0.2)
    assert cfg.working_level == pytest.approx(0.8)
    cfg = ExperimentConfig(scenario="mixture", alpha=0.2, cutoff_level=0.95)
    assert cfg.working_level == pytest.approx(0.95)


def test_adjustment_curve_shrinks_for_oracle():
    # With the true density the additive scores concentrate near zero,
    # so the median absolute adjustment must fall as calibration grows.
    cfg = ExperimentConfig(
        scenario="linear-gaussian",
        estimator="oracle",
        n_train=50,
        replicates=30,
        seed=7,
        grid_points=1024,
    )
    medians = adjustment_curve(cfg, (100, 1000))
    assert medians[1000] < medians[100]


def test_oracle_coverage_is_calibrated_in_small_study():
    res = run_experiment(SMALL)
    cov = res.methods["chcds"].coverage_mean
    se = res.methods["chcds"].coverage_se
    # 8 replicates x 20 points: generous 4-sigma check around 0.9.
    assert abs(cov - 0.9) < 4 * se + 0.05
