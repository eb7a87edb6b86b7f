"""Evidential layer: estimators, intervals, losses, and analytic gradients."""

import numpy as np
import pytest
import scipy.stats

from evisurro import evidential as ev
from evisurro import special as sp

RNG = np.random.default_rng(7321)


def random_field(n, rng=RNG, y_span=2.0):
    m = ev.EvidentialField(
        gamma=rng.uniform(-1.0, 1.0, size=n),
        nu=rng.uniform(0.1, 10.0, size=n),
        alpha=rng.uniform(1.1, 10.0, size=n),
        beta=rng.uniform(0.1, 10.0, size=n),
    )
    y = rng.uniform(-y_span, y_span, size=n)
    return m, y


class TestContainers:
    def test_params_invariants(self):
        with pytest.raises(ValueError):
            ev.EvidentialParams(gamma=0.0, nu=-1.0, alpha=2.0, beta=1.0)
        with pytest.raises(ValueError):
            ev.EvidentialParams(gamma=0.0, nu=1.0, alpha=1.0, beta=1.0)
        with pytest.raises(ValueError):
            ev.EvidentialParams(gamma=0.0, nu=1.0, alpha=2.0, beta=0.0)
        with pytest.raises(ValueError):
            ev.EvidentialParams(gamma=1.5, nu=1.0, alpha=2.0, beta=1.0)

    def test_field_shape_mismatch(self):
        with pytest.raises(ValueError):
            ev.EvidentialField(
                gamma=np.zeros(3),
                nu=np.ones(4),
                alpha=np.full(3, 2.0),
                beta=np.ones(3),
            )

    def test_field_element(self):
        m, _ = random_field(5)
        e = m.element(2)
        assert e.gamma == m.gamma[2]
        assert e.alpha == m.alpha[2]


class TestEstimators:
    def test_predict_mean(self):
        m = ev.EvidentialParams(gamma=0.3, nu=1.0, alpha=2.0, beta=1.0)
        assert ev.predict_mean(m) == 0.3
        assert ev.predict_mean(
            ev.EvidentialParams(gamma=0.0, nu=1.0, alpha=2.0, beta=1.0)
        ) == 0.0

    def test_predict_mean_field_is_gamma_channel(self):
        m, _ = random_field(64)
        assert np.array_equal(ev.predict_mean(m), m.gamma)

    def test_aleatoric_values(self):
        assert ev.aleatoric(ev.EvidentialParams(0.0, 1.0, 2.0, 1.0)) == pytest.approx(1.0)
        assert ev.aleatoric(ev.EvidentialParams(0.0, 1.0, 3.0, 4.0)) == pytest.approx(2.0)
        near_one = ev.EvidentialParams(0.0, 1.0, 1.0 + 1e-6, 1.0)
        assert ev.aleatoric(near_one) == pytest.approx(1e6, rel=1e-9)

    def test_epistemic_values(self):
        assert ev.epistemic(ev.EvidentialParams(0.0, 1.0, 2.0, 1.0)) == pytest.approx(1.0)
        assert ev.epistemic(ev.EvidentialParams(0.0, 4.0, 2.0, 1.0)) == pytest.approx(0.25)

    def test_decomposition_identity(self):
        m, _ = random_field(100)
        summary = ev.uncertainty_summary(m)
        # Definitional tie: epistemic is aleatoric / nu, bit for bit.
        assert np.array_equal(summary.epistemic, summary.aleatoric / m.nu)
        assert np.allclose(summary.epistemic * m.nu, summary.aleatoric, rtol=4e-16)


class TestPredictiveDist:
    def test_unit_case(self):
        d = ev.predictive_dist(ev.EvidentialParams(0.0, 1.0, 2.0, 1.0))
        assert d.loc == 0.0
        assert float(d.scale) == pytest.approx(1.0)
        assert float(d.df) == pytest.approx(4.0)

    def test_scale_df_formula(self):
        d = ev.predictive_dist(ev.EvidentialParams(0.5, 2.0, 3.0, 3.0))
        assert float(d.scale) ** 2 == pytest.approx(1.5)
        assert float(d.df) == pytest.approx(6.0)

    def test_marginal_matches_hierarchy_sampling(self):
        # Monte-Carlo oracle: draw sigma^2 ~ InvGamma(alpha, beta),
        # mu ~ N(gamma, sigma^2/nu), y ~ N(mu, sigma^2); the marginal must
        # be the Student-t returned by predictive_dist.
        rng = np.random.default_rng(42)
        gamma, nu, alpha, beta = 0.2, 1.5, 3.0, 2.0
        n = 100_000
        sigma2 = 1.0 / rng.gamma(shape=alpha, scale=1.0 / beta, size=n)
        mu = rng.normal(gamma, np.sqrt(sigma2 / nu))
        y = rng.normal(mu, np.sqrt(sigma2))

        d = ev.predictive_dist(ev.EvidentialParams(gamma, nu, alpha, beta))
        stat = scipy.stats.kstest(
            y, scipy.stats.t(df=float(d.df), loc=float(d.loc), scale=float(d.scale)).cdf
        ).statistic
        assert stat < 0.01


class TestRawInterval:
    def test_unit_case_bounds(self):
        m = ev.EvidentialParams(0.0, 1.0, 2.0, 1.0)
        iv = ev.raw_interval(m, 0.05)
        expected = sp.student_t_quantile(4.0, 0.975)
        assert iv.lo == pytest.approx(-expected, abs=1e-9)
        assert iv.hi == pytest.approx(expected, abs=1e-9)
        assert iv.confidence == 0.95

    def test_width_vanishes_as_delta_to_one(self):
        m = ev.EvidentialParams(0.1, 2.0, 3.0, 0.5)
        assert ev.raw_interval(m, 1.0 - 1e-9).width == pytest.approx(0.0, abs=1e-6)

    def test_symmetric_about_gamma(self):
        m, _ = random_field(50)
        iv = ev.raw_interval(m, 0.1)
        assert np.max(np.abs(0.5 * (iv.lo + iv.hi) - m.gamma)) < 1e-12

    def test_nesting_in_delta(self):
        m, _ = random_field(50)
        inner = ev.raw_interval(m, 0.2)
        outer = ev.raw_interval(m, 0.05)
        assert np.all(outer.lo < inner.lo)
        assert np.all(outer.hi > inner.hi)

    def test_model_coverage(self):
        # Sampling oracle: fraction of marginal draws inside the 95% band.
        rng = np.random.default_rng(99)
        gamma, nu, alpha, beta = -0.3, 2.0, 2.5, 1.2
        n = 100_000
        sigma2 = 1.0 / rng.gamma(shape=alpha, scale=1.0 / beta, size=n)
        mu = rng.normal(gamma, np.sqrt(sigma2 / nu))
        y = rng.normal(mu, np.sqrt(sigma2))
        iv = ev.raw_interval(ev.EvidentialParams(gamma, nu, alpha, beta), 0.05)
        hit = np.mean((y >= iv.lo) & (y <= iv.hi))
        assert hit == pytest.approx(0.95, abs=0.005)

    def test_delta_domain(self):
        m = ev.EvidentialParams(0.0, 1.0, 2.0, 1.0)
        with pytest.raises(ValueError):
            ev.raw_interval(m, 0.0)
        with pytest.raises(ValueError):
            ev.raw_interval(m, 1.0)


class TestLosses:
    def test_nll_center_value(self):
        # Frozen from the independent Student-t reference formula:
        # -ln St(0; 0, 1, 4) = 0.9808292530117262.
        m = ev.EvidentialParams(0.0, 1.0, 2.0, 1.0)
        assert ev.nll_loss(m, 0.0) == pytest.approx(0.9808292530117262, abs=1e-10)

    def test_marginalization_identity(self):
        m, y = random_field(10_000)
        direct = ev.nll_loss(m, y)
        via_t = -sp.student_t_logpdf(y, ev.predictive_dist(m))
        assert np.max(np.abs(direct - via_t)) < 1e-8

    def test_nll_monotone_in_residual(self):
        m = ev.EvidentialParams(0.0, 1.2, 2.5, 0.8)
        rs = np.linspace(0.0, 5.0, 40)
        vals = [ev.nll_loss(m, r) for r in rs]
        assert np.all(np.diff(vals) > 0)

    def test_reg_loss(self):
        m = ev.EvidentialParams(0.0, 1.0, 2.0, 1.0)
        assert ev.reg_loss(m, 0.0) == 0.0
        assert ev.reg_loss(m, 1.0) == pytest.approx(4.0)
        assert ev.reg_loss(m, 2.0) == pytest.approx(2.0 * ev.reg_loss(m, 1.0))

    def test_u_loss(self):
        m = ev.EvidentialParams(0.0, 1.0, 2.0, 1.0)
        assert ev.u_loss(m, 0.0) == 0.0
        assert ev.u_loss(m, 1.0) == pytest.approx(0.5)

    def test_u_loss_is_inverse_total_uncertainty(self):
        m, y = random_field(200)
        expected = (y - m.gamma) ** 2 / (ev.aleatoric(m) + ev.epistemic(m))
        assert np.allclose(ev.u_loss(m, y), expected, rtol=1e-12)

    def test_total_loss_composition(self):
        m = ev.EvidentialParams(0.0, 1.0, 2.0, 1.0)
        w0 = ev.LossWeights(lambda_reg=0.0, xi_reg=0.0)
        assert ev.total_loss(m, 1.3, w0) == ev.nll_loss(m, 1.3)
        w1 = ev.LossWeights(lambda_reg=1.0, xi_reg=1.0)
        assert ev.total_loss(m, 1.0, w1) == pytest.approx(
            ev.nll_loss(m, 1.0) + 4.0 + 0.5
        )

    def test_field_reduction_is_elementwise_mean(self):
        m, y = random_field(128)
        w = ev.LossWeights()
        per_element = [
            ev.total_loss(m.element((i,)), y[i], w) for i in range(128)
        ]
        assert np.mean(ev.total_loss(m, y, w)) == pytest.approx(
            np.mean(per_element), rel=1e-12
        )

    def test_losses_finite_for_huge_residuals(self):
        m, _ = random_field(100)
        w = ev.LossWeights()
        for offset in (1e3, 1e6):
            vals = ev.total_loss(m, m.gamma + offset, w)
            assert np.all(np.isfinite(vals))

    def test_loss_weights_validation(self):
        with pytest.raises(ValueError):
            ev.LossWeights(lambda_reg=-0.1)
        with pytest.raises(ValueError):
            ev.LossWeights(xi_reg=float("nan"))


def finite_difference_gradients(m, y, w, step=1e-5):
    """Central differences of total_loss per hyperparameter coordinate."""
    base = dict(gamma=m.gamma, nu=m.nu, alpha=m.alpha, beta=m.beta)
    grads = []
    for key in ("gamma", "nu", "alpha", "beta"):
        up = dict(base)
        dn = dict(base)
        up[key] = base[key] + step
        dn[key] = base[key] - step
        f_up = ev.total_loss(ev.EvidentialField(**up), y, w)
        f_dn = ev.total_loss(ev.EvidentialField(**dn), y, w)
        grads.append((f_up - f_dn) / (2.0 * step))
    return np.stack(grads, axis=-1)


class TestGradients:
    def test_reg_gamma_sign(self):
        m = ev.EvidentialParams(0.0, 1.0, 2.0, 1.0)
        w = ev.LossWeights(lambda_reg=1.0, xi_reg=0.0)
        g_with = ev.loss_gradients(m, 0.7, w)
        g_without = ev.loss_gradients(m, 0.7, ev.LossWeights(0.0, 0.0))
        assert g_with[0] - g_without[0] == pytest.approx(-(2.0 * 1.0 + 2.0))

    def test_nll_gamma_stationary_at_mode(self):
        m = ev.EvidentialParams(0.4, 2.0, 3.0, 1.5)
        g = ev.loss_gradients(m, 0.4, ev.LossWeights(0.0, 0.0))
        assert g[0] == pytest.approx(0.0, abs=1e-14)

    def test_against_finite_differences(self):
        rng = np.random.default_rng(2357)
        n = 1000
        m = ev.EvidentialField(
            gamma=rng.uniform(-1.0, 1.0, size=n),
            nu=rng.uniform(0.1, 10.0, size=n),
            alpha=rng.uniform(1.1, 10.0, size=n),
            beta=rng.uniform(0.1, 10.0, size=n),
        )
        y = rng.uniform(-2.0, 2.0, size=n)
        w = ev.LossWeights(lambda_reg=0.01, xi_reg=0.05)
        analytic = ev.loss_gradients(m, y, w)
        numeric = finite_difference_gradients(m, y, w)
        err = np.abs(analytic - numeric)
        tol = np.maximum(1e-8, 1e-4 * np.abs(numeric))
        assert np.all(err <= tol)
