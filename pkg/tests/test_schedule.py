import math

import numpy as np
import pytest

from bidiopt.schedule import (
    ScheduleParams,
    audit_sequences,
    calc_learning_rates,
    default_gamma0,
    gamma_lower_bound_exp,
    gamma_lower_bound_piecewise,
    lbar_theory,
    strongly_convex_q,
    t_bar,
    theta_bar,
    theta_min,
)


def _params(**kw):
    base = dict(lbar=1.0, mu=0.0, p=1.0, alpha=1.0, tau=1.0, beta=1.0, gamma0=1.0)
    base.update(kw)
    return ScheduleParams(**base)


class TestThetaMin:
    def test_all_ones(self):
        assert theta_min(1, 1, 1, 1) == 0.25

    def test_alpha_beta_half(self):
        assert theta_min(1, 0.5, 1, 0.5) == 0.125

    def test_small_p_clamps_at_one(self):
        assert theta_min(0.1, 1, 1, 1) == 0.25


class TestCalcLearningRates:
    def test_unit_case_golden_ratio_root(self):
        # root of th^2 + th - 1 = 0
        p = _params()
        assert theta_bar(1.0, p) == pytest.approx((math.sqrt(5) - 1) / 2, rel=1e-14)
        gamma_next, gamma, theta = calc_learning_rates(1.0, p)
        assert theta == 0.25
        assert gamma == pytest.approx(1 / 3, rel=1e-14)
        assert gamma_next == pytest.approx(4 / 3, rel=1e-14)

    def test_huge_gamma_root_uncapped(self):
        # closed form (-1 + sqrt(1 + 4e6)) / 2e6 evaluated independently
        expected = (-1.0 + math.sqrt(1.0 + 4.0e6)) / 2.0e6
        p = _params()
        _, _, theta = calc_learning_rates(1e6, p)
        assert expected < 0.25
        assert theta == pytest.approx(expected, rel=1e-13)

    def test_strongly_convex_root(self):
        # root of th^2 + 2 th - 2 = 0 is sqrt(3) - 1
        p = _params(mu=1.0)
        assert theta_bar(1.0, p) == pytest.approx(math.sqrt(3) - 1, rel=1e-14)
        gamma_next, gamma, theta = calc_learning_rates(1.0, p)
        assert theta == 0.25
        assert gamma == pytest.approx(1 / 3, rel=1e-14)

    def test_stability_against_naive_formula(self):
        # the rationalized root must match the textbook formula wherever the
        # latter is representable
        rng = np.random.default_rng(0)
        for _ in range(200):
            lbar = 10.0 ** rng.uniform(-3, 6)
            mu = lbar * rng.uniform(0, 1)
            p = rng.uniform(0.05, 1)
            gb = 10.0 ** rng.uniform(0, 12)
            params = _params(lbar=lbar, mu=mu, p=p)
            a_coef = p * lbar * gb
            b_coef = p * (lbar + gb * mu)
            c_coef = -(lbar + gb * mu)
            naive = (-b_coef + math.sqrt(b_coef**2 - 4 * a_coef * c_coef)) / (2 * a_coef)
            assert theta_bar(gb, params) == pytest.approx(naive, rel=1e-9)

    def test_rejects_bad_gamma(self):
        with pytest.raises(ValueError):
            calc_learning_rates(0.0, _params())


class TestLbarTheory:
    def test_zero_omega_collapse(self):
        assert lbar_theory(2.0, 2.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1) == 660508 * 2.0

    def test_plug_in_beta_half(self):
        # the L_max * omega * p^2 / (beta^2 n) term dominates at 4
        assert lbar_theory(1, 1, 1, 1, 1, 1, 0.5, 1) == 660508 * 4.0

    def test_monotone_in_omega(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            L = 10.0 ** rng.uniform(-2, 2)
            L_max = L * rng.uniform(1, 5)
            alpha, tau, p, beta = rng.uniform(0.05, 1, 4)
            n = int(rng.integers(1, 50))
            omegas = np.sort(rng.uniform(0, 100, 2))
            lo = lbar_theory(L, L_max, omegas[0], alpha, tau, p, beta, n)
            hi = lbar_theory(L, L_max, omegas[1], alpha, tau, p, beta, n)
            assert hi >= lo


class TestDefaults:
    def test_gamma0(self):
        assert default_gamma0(100.0, 10.0, 2.0) == 50.0
        assert default_gamma0(1.0, 10.0, 2.0) == 1.0
        assert default_gamma0(100.0, 10.0, 0.0) == 10.0
        assert default_gamma0(5.0, 10.0, 0.0) == 1.0

    def test_param_validation(self):
        with pytest.raises(ValueError):
            _params(mu=2.0)  # mu > lbar
        with pytest.raises(ValueError):
            _params(p=0.0)
        with pytest.raises(ValueError):
            _params(gamma0=0.5)

    def test_strongly_convex_q_positive_terms(self):
        q = strongly_convex_q(10.0, 10.0, 0.1, 4.0, 0.2, 0.2, 0.2, 5)
        assert q > 0
        with pytest.raises(ValueError):
            strongly_convex_q(10.0, 10.0, 0.0, 4.0, 0.2, 0.2, 0.2, 5)


def _random_params(rng):
    lbar = 10.0 ** rng.uniform(-2, 4)
    mu = 0.0 if rng.random() < 0.3 else lbar * 10.0 ** rng.uniform(-8, 0)
    return ScheduleParams(
        lbar=lbar,
        mu=mu,
        p=rng.uniform(0.02, 1.0),
        alpha=rng.uniform(0.02, 1.0),
        tau=rng.uniform(0.02, 1.0),
        beta=rng.uniform(0.02, 1.0),
        gamma0=10.0 ** rng.uniform(0, 3),
    )


class TestLemmaProperties:
    def test_random_grid_short_runs(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            params = _random_params(rng)
            report = audit_sequences(params, steps=500)
            assert all(report.values()), (params, report)

    def test_exp_bound_saturates_gracefully(self):
        # strongly convex at the cap: Gamma overflows to inf well inside 1e4
        # steps and the bounds must still compare as satisfied
        params = _params(mu=1.0, gamma0=1.0)
        report = audit_sequences(params, steps=10**4)
        assert all(report.values()), report

    def test_t_bar_nonnegative(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            params = _random_params(rng)
            tb = t_bar(params)
            assert tb >= 0
            assert gamma_lower_bound_piecewise(tb, params) >= 0
            assert gamma_lower_bound_exp(0, params) == pytest.approx(params.gamma0 / 2)
