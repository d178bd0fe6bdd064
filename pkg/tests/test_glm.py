import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mplasso.glm import (
    BERNOULLI,
    GAUSSIAN,
    CoefVector,
    Dataset,
    deviance,
    get_family,
    linear_predictor,
    neg_log_likelihood,
    sigmoid,
)
from mplasso.prior import PriorEstimate, predicted_responses


def _prior(beta_p, data, fam):
    return PriorEstimate(beta_p, predicted_responses(beta_p, data, fam), "p")


class TestFamilies:
    def test_lookup_aliases(self):
        assert get_family("linear") is GAUSSIAN
        assert get_family("logistic") is BERNOULLI
        assert get_family(BERNOULLI) is BERNOULLI
        with pytest.raises(ValueError):
            get_family("poisson")

    @pytest.mark.parametrize("fam", [GAUSSIAN, BERNOULLI])
    def test_variance_matches_finite_difference(self, fam):
        theta = np.linspace(-10, 10, 201)
        h = 1e-5
        fd = (fam.mean(theta + h) - fam.mean(theta - h)) / (2 * h)
        np.testing.assert_allclose(fam.variance(theta), fd, atol=1e-6)
        assert np.all(fam.variance(theta) > 0)

    def test_sigmoid_is_overflow_safe(self):
        with np.errstate(over="raise"):
            out = sigmoid(np.array([-800.0, 0.0, 800.0]))
        np.testing.assert_array_equal(out, [0.0, 0.5, 1.0])

    def test_bernoulli_b_is_stable(self):
        np.testing.assert_allclose(BERNOULLI.b(np.array([700.0, -700.0])), [700.0, 0.0], atol=1e-12)

    def test_bernoulli_rejects_out_of_range_response(self):
        with pytest.raises(ValueError):
            Dataset(np.ones((2, 1)), np.array([0.0, 1.5])).check(BERNOULLI)
        Dataset(np.ones((2, 1)), np.array([0.2, 0.9])).check(BERNOULLI)


class TestContainers:
    def test_dataset_shape_checks(self):
        with pytest.raises(ValueError):
            Dataset(np.ones((3, 2)), np.ones(4))
        with pytest.raises(ValueError):
            Dataset(np.ones((3, 0)), np.ones(3))

    def test_coef_roundtrip_and_support(self):
        b = CoefVector(0.5, np.array([0.0, 2.0, 0.0, -1.0]))
        np.testing.assert_array_equal(b.support(), [1, 3])
        np.testing.assert_array_equal(CoefVector.from_array(b.to_array()).slopes, b.slopes)

    def test_coef_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            CoefVector(np.nan, np.zeros(2))

    def test_linear_predictor_dimension_mismatch(self):
        with pytest.raises(ValueError):
            linear_predictor(CoefVector.zeros(3), Dataset(np.ones((2, 2)), np.ones(2)))


class TestLikelihood:
    def test_gaussian_zero(self):
        d = Dataset(np.ones((4, 2)), np.zeros(4))
        assert neg_log_likelihood(CoefVector.zeros(2), d, GAUSSIAN) == 0.0

    def test_bernoulli_at_zero_is_log2(self):
        d = Dataset(np.random.default_rng(0).standard_normal((5, 3)), np.array([0, 1, 1, 0, 1.0]))
        assert neg_log_likelihood(CoefVector.zeros(3), d, BERNOULLI) == pytest.approx(math.log(2))

    def test_gaussian_single_observation(self):
        d = Dataset(np.zeros((1, 1)), np.array([2.0]))
        assert neg_log_likelihood(CoefVector(1.0, np.zeros(1)), d, GAUSSIAN) == pytest.approx(-1.5)

    def test_nonfinite_predictor_raises(self):
        d = Dataset(np.array([[1e308], [1.0]]), np.zeros(2))
        with pytest.raises(FloatingPointError), np.errstate(over="ignore"):
            neg_log_likelihood(CoefVector(0.0, np.array([1e10])), d, GAUSSIAN)


class TestDeviance:
    def test_zero_at_prior(self, rng):
        d = Dataset(rng.standard_normal((20, 4)), rng.random(20))
        bp = CoefVector(0.2, rng.standard_normal(4))
        for fam in (GAUSSIAN, BERNOULLI):
            assert deviance(bp, _prior(bp, d, fam), d, fam) == pytest.approx(0.0, abs=1e-15)

    def test_gaussian_identity(self, rng):
        for _ in range(20):
            n, p = rng.integers(2, 50), rng.integers(1, 10)
            d = Dataset(rng.standard_normal((n, p)), rng.standard_normal(n))
            b, bp = (CoefVector(rng.normal(), rng.standard_normal(p)) for _ in range(2))
            z = linear_predictor(bp, d) - linear_predictor(b, d)
            assert abs(deviance(b, _prior(bp, d, GAUSSIAN), d, GAUSSIAN) - z @ z / (2 * n)) <= 1e-10

    def test_bernoulli_small_case_matches_likelihood_difference(self):
        # n=2, p=1 by hand: D = l(beta; y_p) - l(beta_p; y_p)
        X = np.array([[1.0], [-2.0]])
        d = Dataset(X, np.zeros(2))
        b, bp = CoefVector(0.1, np.array([0.7])), CoefVector(-0.3, np.array([0.2]))
        th = np.array([0.1 + 0.7, 0.1 - 1.4])
        thp = np.array([-0.3 + 0.2, -0.3 - 0.4])
        yp = 1 / (1 + np.exp(-thp))
        lik = lambda t: np.mean(np.log1p(np.exp(t)) - yp * t)
        assert deviance(b, _prior(bp, d, BERNOULLI), d, BERNOULLI) == pytest.approx(
            lik(th) - lik(thp), abs=1e-14)

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), fam=st.sampled_from([GAUSSIAN, BERNOULLI]),
           scale=st.floats(0.01, 5.0))
    def test_nonnegative(self, seed, fam, scale):
        rng = np.random.default_rng(seed)
        d = Dataset(rng.standard_normal((15, 3)), np.zeros(15))
        b = CoefVector(rng.normal(), scale * rng.standard_normal(3))
        bp = CoefVector(rng.normal(), scale * rng.standard_normal(3))
        assert deviance(b, _prior(bp, d, fam), d, fam) >= -1e-10
