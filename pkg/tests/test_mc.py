import numpy as np
import pytest

from ddrobust import (
    B_SOURCE_TRUE,
    CeLqrMap,
    PerturbationModel,
    PinvMap,
    StabilityError,
    collect,
    estimate_instability,
    fd_jacobian,
    random_support,
    sample_z,
    vehicle_model,
    wilson_interval,
)
from ddrobust.ctrlmaps import ControllerMap
from ddrobust.lti import LtiSystem
from ddrobust.mc import MODE_EXACT, MODE_FIRST_ORDER, trial_rng


class LinearMap(ControllerMap):
    """K with vec(K) = M0 vec(X); exact and linearized closed loops agree."""

    name = "linear-test"

    def __init__(self, m0, m, n):
        self.m0 = np.asarray(m0, dtype=float)
        self.m, self.n = m, n

    def evaluate(self, data):
        return (self.m0 @ data.x_vec).reshape((self.m, self.n), order="F")


class FlakyMap(ControllerMap):
    """Delegates to an inner map but fails when a watched entry drifts."""

    name = "flaky-test"

    def __init__(self, inner, watched, nominal, width):
        self.inner = inner
        self.watched = watched
        self.nominal = nominal
        self.width = width

    def evaluate(self, data):
        if abs(data.x_vec[self.watched] - self.nominal) > self.width:
            raise ValueError("watched entry out of tolerance")
        return self.inner.evaluate(data)


@pytest.fixture(scope="module")
def vehicle_setup():
    sys = vehicle_model(0.1)
    data = collect(sys, 1, 100, seed=0)
    support = random_support(data.p, 20, np.random.default_rng(77))
    return sys, data, support


class TestWilsonInterval:
    def test_zero_successes_pins_low_end(self):
        lo, hi = wilson_interval(0, 2000)
        assert lo == 0.0
        assert 0.0 < hi < 0.01

    def test_all_successes_pins_high_end(self):
        lo, hi = wilson_interval(2000, 2000)
        assert hi == 1.0
        assert 0.99 < lo < 1.0

    def test_brackets_the_point_estimate(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            n = int(rng.integers(1, 5000))
            s = int(rng.integers(0, n + 1))
            lo, hi = wilson_interval(s, n)
            assert 0.0 <= lo <= s / n <= hi <= 1.0

    def test_mirror_symmetry(self):
        lo, hi = wilson_interval(30, 400)
        lo_m, hi_m = wilson_interval(370, 400)
        assert lo == pytest.approx(1.0 - hi_m, abs=1e-15)
        assert hi == pytest.approx(1.0 - lo_m, abs=1e-15)

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            wilson_interval(0, 0)
        with pytest.raises(ValueError):
            wilson_interval(-1, 10)
        with pytest.raises(ValueError):
            wilson_interval(11, 10)

    def test_coverage_near_nominal(self):
        # 95% interval should cover the true p = 0.1 in at least ~93% of
        # repeated binomial experiments at n = 2000.
        rng = np.random.default_rng(2024)
        hits = 0
        for _ in range(500):
            s = int(rng.binomial(2000, 0.1))
            lo, hi = wilson_interval(s, 2000)
            hits += lo <= 0.1 <= hi
        assert hits / 500 >= 0.93


class TestSampleZ:
    def test_moments_match_model(self):
        sigmas = np.array([0.5, 2.0, 0.1])
        model = PerturbationModel(np.array([0, 1, 2]), sigmas)
        rng = np.random.default_rng(6)
        draws = np.array([sample_z(model, rng) for _ in range(20000)])
        assert draws.shape == (20000, 3)
        mean_tol = 4.0 * sigmas / np.sqrt(20000)
        assert np.all(np.abs(draws.mean(axis=0)) < mean_tol)
        assert np.allclose(draws.std(axis=0), sigmas, rtol=0.05)

    def test_tiny_sigma_stays_tiny(self):
        model = PerturbationModel(np.array([0, 1]), np.full(2, 1e-30))
        z = sample_z(model, np.random.default_rng(0))
        assert np.all(np.abs(z) < 1e-28)


class TestRandomSupport:
    def test_full_draw_is_every_index(self):
        support = random_support(12, 12, np.random.default_rng(0))
        assert np.array_equal(support, np.arange(12))

    def test_draw_properties(self):
        support = random_support(500, 50, np.random.default_rng(1))
        assert support.shape == (50,)
        assert len(np.unique(support)) == 50
        assert np.all(np.diff(support) > 0)
        assert support.min() >= 0 and support.max() < 500

    def test_oversized_request_rejected(self):
        with pytest.raises(ValueError):
            random_support(10, 11, np.random.default_rng(0))

    def test_uniform_over_indices(self):
        # chi-square goodness of fit at alpha = 0.001, df = 39.
        rng = np.random.default_rng(31)
        counts = np.zeros(40)
        for _ in range(20000):
            counts[random_support(40, 5, rng)] += 1
        expected = 20000 * 5 / 40
        chi2 = float(np.sum((counts - expected) ** 2 / expected))
        assert chi2 < 72.055


class TestTrialRng:
    def test_same_key_same_stream(self):
        a = trial_rng(42, 7).standard_normal(5)
        b = trial_rng(42, 7).standard_normal(5)
        assert np.array_equal(a, b)

    def test_distinct_trials_distinct_streams(self):
        a = trial_rng(42, 7).standard_normal(5)
        b = trial_rng(42, 8).standard_normal(5)
        c = trial_rng(43, 7).standard_normal(5)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)


class TestEstimateInstability:
    def test_deterministic_given_seed(self, vehicle_setup):
        sys, data, support = vehicle_setup
        model = PerturbationModel(support, np.full(20, 3.0))
        first = estimate_instability(sys, data, CeLqrMap(), model, 100,
                                     MODE_FIRST_ORDER, seed=5)
        second = estimate_instability(sys, data, CeLqrMap(), model, 100,
                                      MODE_FIRST_ORDER, seed=5)
        assert first == second
        shifted = estimate_instability(sys, data, CeLqrMap(), model, 100,
                                       MODE_FIRST_ORDER, seed=6)
        assert shifted.unstable_count != first.unstable_count or shifted != first

    def test_refuses_unstable_nominal_loop(self):
        sys = vehicle_model(0.1)
        data = collect(sys, 1, 200, seed=0)  # pinv loop is unstable here
        support = random_support(data.p, 10, np.random.default_rng(0))
        model = PerturbationModel(support, np.full(10, 0.01))
        with pytest.raises(StabilityError):
            estimate_instability(sys, data, PinvMap(), model, 10)

    def test_argument_validation(self, vehicle_setup):
        sys, data, support = vehicle_setup
        model = PerturbationModel(support, np.full(20, 0.1))
        with pytest.raises(ValueError):
            estimate_instability(sys, data, CeLqrMap(), model, 0)
        with pytest.raises(ValueError):
            estimate_instability(sys, data, CeLqrMap(), model, 10, mode="both")
        bad = PerturbationModel(np.array([data.p * 2]), np.array([0.1]))
        with pytest.raises(ValueError):
            estimate_instability(sys, data, CeLqrMap(), bad, 10)

    def test_tiny_sigma_never_destabilizes(self, vehicle_setup):
        sys, data, support = vehicle_setup
        model = PerturbationModel(support, np.full(20, 1e-6))
        exact = estimate_instability(sys, data, CeLqrMap(), model, 200,
                                     MODE_EXACT, seed=1)
        assert exact.p_hat == 0.0
        assert exact.ci_low == 0.0
        fo = estimate_instability(sys, data, CeLqrMap(), model, 2000,
                                  MODE_FIRST_ORDER, seed=1)
        assert fo.p_hat == 0.0

    def test_huge_sigma_destabilizes(self):
        sys = vehicle_model(0.1)
        data = collect(sys, 1, 200, seed=3)
        support = random_support(data.p, 50, np.random.default_rng(503))
        model = PerturbationModel(support, np.full(50, 1e3))
        report = estimate_instability(sys, data, PinvMap(), model, 200,
                                      MODE_EXACT, seed=11)
        assert report.p_hat >= 0.9

    def test_modes_agree_exactly_on_linear_map(self):
        # For a map linear in vec(X) the linearized closed loop equals the
        # re-evaluated one, so the two modes must count the same trials.
        sys = LtiSystem(a=np.array([[0.5, 0.1], [0.0, 0.4]]),
                        b=np.array([[0.0], [1.0]]))
        rng = np.random.default_rng(0)
        m0 = 0.05 * rng.standard_normal((2, 12))
        data = collect(sys, 1, 6, seed=50)
        cmap = LinearMap(m0, 1, 2)
        model = PerturbationModel(np.arange(12), np.full(12, 4.0))
        exact = estimate_instability(sys, data, cmap, model, 200,
                                     MODE_EXACT, seed=9)
        fo = estimate_instability(sys, data, cmap, model, 200,
                                  MODE_FIRST_ORDER, seed=9)
        assert exact.unstable_count == fo.unstable_count
        assert 0.0 < exact.p_hat < 1.0

    def test_estimate_rises_with_sigma(self, vehicle_setup):
        sys, data, support = vehicle_setup
        bundle = fd_jacobian(CeLqrMap(), data, support).with_b(sys.b, B_SOURCE_TRUE)
        p_hats = []
        for sigma in (1.0, 3.0, 10.0, 30.0):
            model = PerturbationModel(support, np.full(20, sigma))
            report = estimate_instability(sys, data, CeLqrMap(), model, 200,
                                          MODE_FIRST_ORDER, seed=5, bundle=bundle)
            p_hats.append(report.p_hat)
        assert all(a < b for a, b in zip(p_hats, p_hats[1:]))

    def test_supplied_bundle_matches_internal_one(self, vehicle_setup):
        sys, data, support = vehicle_setup
        model = PerturbationModel(support, np.full(20, 3.0))
        bundle = fd_jacobian(CeLqrMap(), data, support).with_b(sys.b, B_SOURCE_TRUE)
        with_bundle = estimate_instability(sys, data, CeLqrMap(), model, 100,
                                           MODE_FIRST_ORDER, seed=5, bundle=bundle)
        without = estimate_instability(sys, data, CeLqrMap(), model, 100,
                                       MODE_FIRST_ORDER, seed=5)
        assert with_bundle == without
        assert with_bundle.b_source == "true"

    def test_first_order_needs_b(self, vehicle_setup):
        sys, data, support = vehicle_setup
        model = PerturbationModel(support, np.full(20, 3.0))
        bundle = fd_jacobian(CeLqrMap(), data, support)  # no B attached
        with pytest.raises(ValueError):
            estimate_instability(sys, data, CeLqrMap(), model, 10,
                                 MODE_FIRST_ORDER, seed=5, bundle=bundle)

    def test_map_failures_are_skipped_and_counted(self, vehicle_setup):
        sys, data, support = vehicle_setup
        watched = int(support[0])
        sigma = 0.5
        flaky = FlakyMap(CeLqrMap(), watched, float(data.x_vec[watched]),
                         width=sigma)
        model = PerturbationModel(support, np.full(20, sigma))
        report = estimate_instability(sys, data, flaky, model, 100,
                                      MODE_EXACT, seed=2)
        assert report.trials == 100
        assert 0 < report.skipped < 100
        effective = report.trials - report.skipped
        assert report.p_hat == report.unstable_count / effective
        assert wilson_interval(report.unstable_count, effective) == (
            report.ci_low, report.ci_high)

    def test_all_failures_is_an_error(self, vehicle_setup):
        sys, data, support = vehicle_setup
        watched = int(support[0])
        always_fails = FlakyMap(CeLqrMap(), watched,
                                float(data.x_vec[watched]), width=0.0)
        model = PerturbationModel(support, np.full(20, 0.5))
        with pytest.raises(RuntimeError):
            estimate_instability(sys, data, always_fails, model, 20,
                                 MODE_EXACT, seed=2)
