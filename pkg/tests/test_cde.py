import numpy as np
import pytest
from scipy import stats

from chcds import (
    Dataset,
    KernelCdeConfig,
    KnnKernelCdeConfig,
    Scenario,
    auto_bandwidth,
    fit_kernel_cde,
    fit_knn_kernel_cde,
    generate,
    oracle_density,
)
from chcds.cde import _SPLIT_CONSISTENCY, _two_cluster_spread
from chcds.dataset import split_dataset


def test_auto_bandwidth_reference_value():
    # A sample with sd = 1 and IQR/1.34 = 1 at n = 100 gives
    # 1.06 * 100^(-1/5) = 0.42199...
    rng = np.random.default_rng(0)
    raw = rng.standard_normal(100)
    raw = (raw - raw.mean()) / raw.std(ddof=1)
    q75, q25 = np.percentile(raw, [75, 25])
    sample = raw * (1.34 / (q75 - q25))
    sample = sample / sample.std(ddof=1)  # sd back to 1; IQR now below 1.34
    bw = auto_bandwidth(sample)
    q75, q25 = np.percentile(sample, [75, 25])
    spread = min(1.0, (q75 - q25) / 1.34)
    assert bw == pytest.approx(1.06 * spread * 100 ** (-0.2), rel=1e-12)


def test_auto_bandwidth_formula_on_normal_sample():
    rng = np.random.default_rng(1)
    sample = rng.standard_normal(400)
    sd = sample.std(ddof=1)
    q75, q25 = np.percentile(sample, [75, 25])
    expected = 1.06 * min(sd, (q75 - q25) / 1.34) * 400 ** (-0.2)
    assert auto_bandwidth(sample) == pytest.approx(expected, rel=1e-12)


def test_auto_bandwidth_degenerate_errors():
    with pytest.raises(ValueError, match="degenerate"):
        auto_bandwidth(np.array([1.0]))
    with pytest.raises(ValueError, match="degenerate"):
        auto_bandwidth(np.full(50, 3.25))


def test_auto_bandwidth_zero_iqr_uses_sd():
    sample = np.zeros(100)
    sample[:5] = 100.0  # iqr 0, sd positive
    assert auto_bandwidth(sample) > 0


def test_single_point_kernel_is_gaussian_bump():
    train = Dataset(np.array([[0.5]]), np.array([2.0]))
    model = fit_kernel_cde(
        train, KernelCdeConfig(response_bandwidth=0.7, covariate_bandwidths=[1.0])
    )
    ys = np.linspace(-2, 6, 50)
    expected = stats.norm.pdf(ys, 2.0, 0.7)
    np.testing.assert_allclose(model.evaluate(ys, [0.5]), expected, rtol=1e-12)
    # The covariate factor cancels regardless of where we query.
    np.testing.assert_allclose(model.evaluate(ys, [9.0]), expected, rtol=1e-12)


@pytest.fixture(scope="module")
def mixture_train():
    return split_dataset(generate(Scenario("mixture", 1510, 77)), 1000, 500, 10)[0]


def test_kernel_density_nonnegative_and_normalized(mixture_train):
    model = fit_kernel_cde(mixture_train)
    ys = np.linspace(*model.response_range, 4001)
    for x in (-1.2, 0.0, 0.9):
        dens = model.evaluate(ys, [x])
        assert (dens >= 0).all()
        assert np.trapezoid(dens, ys) == pytest.approx(1.0, abs=1e-4)


def test_knn_density_nonnegative_and_normalized(mixture_train):
    model = fit_knn_kernel_cde(mixture_train)
    ys = np.linspace(*model.response_range, 4001)
    for x in (-1.2, 0.0, 0.9):
        dens = model.evaluate(ys, [x])
        assert (dens >= 0).all()
        assert np.trapezoid(dens, ys) == pytest.approx(1.0, abs=1e-4)


def test_kernel_permutation_invariance(mixture_train):
    model = fit_kernel_cde(mixture_train)
    rng = np.random.default_rng(3)
    perm = rng.permutation(len(mixture_train))
    shuffled = mixture_train.subset(perm)
    model_p = fit_kernel_cde(shuffled)
    ys = np.linspace(-6, 6, 101)
    np.testing.assert_allclose(
        model.evaluate(ys, [0.3]), model_p.evaluate(ys, [0.3]), rtol=1e-12
    )


def test_kernel_tracks_oracle_on_smooth_scenario():
    train = generate(Scenario("linear-gaussian", 2000, 21))
    model = fit_kernel_cde(train)
    oracle = oracle_density("linear-gaussian")
    ys = np.linspace(*model.response_range, 3001)
    # Away from the x = 0 noise collapse the estimate should place its
    # mass where the oracle does: mean within half a response sd, total
    # variation under 0.3 (out of a maximum of 2).
    for x in (-1.0, 0.5, 1.5):
        est = model.evaluate(ys, [x])
        exact = oracle.evaluate(ys, [x])
        mean_est = np.trapezoid(ys * est, ys)
        assert abs(mean_est - (5.0 + 2.0 * x)) < 0.5
        assert 0.5 * np.trapezoid(np.abs(est - exact), ys) < 0.3


def test_knn_reduces_to_kernel_at_full_k(mixture_train):
    # Rule-matched comparison: with the spread guard off both models use
    # the plain Silverman bandwidths, so k = n must reproduce the full
    # kernel estimator exactly.
    n = len(mixture_train)
    knn = fit_knn_kernel_cde(mixture_train, KnnKernelCdeConfig(k=n, spread_guard=False))
    kern = fit_kernel_cde(mixture_train)
    ys = np.linspace(-6, 6, 201)
    for x in (-1.0, 0.2, 1.3):
        a = knn.evaluate(ys, [x])
        b = kern.evaluate(ys, [x])
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


def test_spread_guard_tracks_cluster_scale(mixture_train):
    # A neighborhood whose responses form two separated clusters must
    # get a response bandwidth near the within-cluster scale, well below
    # the separation-inflated Silverman value; unimodal neighborhoods
    # should be nearly untouched.
    guarded = fit_knn_kernel_cde(mixture_train, KnnKernelCdeConfig(k=75))
    plain = fit_knn_kernel_cde(mixture_train, KnnKernelCdeConfig(k=75, spread_guard=False))
    bimodal = np.array([[1.3]])
    unimodal = np.array([[-1.2]])
    _, b_g, _ = guarded._neighborhoods(bimodal)
    _, b_p, _ = plain._neighborhoods(bimodal)
    assert b_g[0] < 0.75 * b_p[0]
    _, u_g, _ = guarded._neighborhoods(unimodal)
    _, u_p, _ = plain._neighborhoods(unimodal)
    assert u_g[0] <= u_p[0] + 1e-12
    assert u_g[0] > 0.85 * u_p[0]


def test_split_spread_consistent_for_gaussian_sample():
    # The two-cluster spread is normal-consistent: on one Gaussian
    # cluster it recovers the standard deviation, and on two separated
    # copies it tracks the cluster scale instead of the separation.
    rng = np.random.default_rng(5)
    single = rng.normal(0.0, 2.0, size=(1, 4000))
    est = _two_cluster_spread(single)
    assert est[0] == pytest.approx(2.0, rel=0.05)
    apart = np.concatenate([single, single + 40.0], axis=1)
    est_two = _two_cluster_spread(apart)
    assert est_two[0] == pytest.approx(2.0 / _SPLIT_CONSISTENCY, rel=0.05)
    assert est_two[0] < 0.2 * apart.std()


def test_knn_recovers_bimodality(mixture_train):
    # At x = 1.4 the scenario's two component centers are more than five
    # response units apart; the neighborhood estimate must show two
    # separated local maxima.
    model = fit_knn_kernel_cde(mixture_train, KnnKernelCdeConfig(k=75))
    ys = np.linspace(-8, 8, 2001)
    dens = model.evaluate(ys, [1.4])
    interior = (dens[1:-1] > dens[:-2]) & (dens[1:-1] > dens[2:])
    peaks = ys[1:-1][interior & (dens[1:-1] > 0.25 * dens.max())]
    assert peaks.size >= 2
    assert peaks.max() - peaks.min() > 3.0


def test_knn_rejects_bad_k(mixture_train):
    with pytest.raises(ValueError, match="k must be"):
        fit_knn_kernel_cde(mixture_train, KnnKernelCdeConfig(k=1))
    with pytest.raises(ValueError, match="k must be"):
        fit_knn_kernel_cde(mixture_train, KnnKernelCdeConfig(k=len(mixture_train) + 1))


def test_far_query_takes_fallback_and_flags(mixture_train):
    model = fit_kernel_cde(mixture_train)
    assert model.diagnostics.fallback_count == 0
    far = model.evaluate(np.linspace(-6, 6, 64), [1e6])
    assert model.diagnostics.fallback_count == 1
    # The substituted query answers at the nearest training covariate.
    nearest = mixture_train.x[np.argmax(mixture_train.x[:, 0])]
    expected = model.evaluate(np.linspace(-6, 6, 64), nearest)
    np.testing.assert_allclose(far, expected, rtol=1e-10)


def test_knn_far_query_takes_fallback(mixture_train):
    model = fit_knn_kernel_cde(mixture_train)
    model.evaluate(np.linspace(-6, 6, 64), [1e6])
    assert model.diagnostics.fallback_count == 1


def test_batch_paths_match_single_queries(mixture_train):
    kern = fit_kernel_cde(mixture_train)
    knn = fit_knn_kernel_cde(mixture_train)
    grid = np.linspace(-6, 6, 128)
    xs = np.array([[-0.7], [0.1], [1.2]])
    for model in (kern, knn):
        batch = model.evaluate_grid(grid, xs)
        for i, x in enumerate(xs):
            np.testing.assert_allclose(batch[i], model.evaluate(grid, x), rtol=1e-12)
        ys = np.array([0.5, -1.0, 2.0])
        pointwise = model.evaluate_at(ys, xs)
        for i in range(3):
            assert pointwise[i] == pytest.approx(
                float(model.evaluate(ys[i], xs[i])), rel=1e-12
            )
