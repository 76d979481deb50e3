"""Dimension reduction: diagnostics, splits, CCS/MAP samplers, Hellinger."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

import gmixpost as gp
from gmixpost.errors import ArgError, NumericalError
from gmixpost.mala import MalaConfig
from gmixpost.mixing import ReducedVEvaluator, WSpaceEvaluator
from gmixpost.reduction import (
    CoordinateSplit,
    MapApprox,
    _epsilon_curve,
    ccs_w_sampler,
    ccs_x_sampler,
    estimate_diagnostic_w,
    estimate_diagnostic_x,
    hellinger_bound_estimate,
    map_w_approx,
    map_w_sampler,
    map_x_approx,
    map_x_sampler,
    split_by_diagnostic,
    split_top_r,
)

from conftest import random_model
from oracles import WSpaceOracle, XSpaceOracle, ks_distance


def weak_data_toy(seed=0, noise_var=16.0):
    """d=2 problem where the posterior stays close to the prior (large noise)."""
    forward = np.array([[0.9, 0.3], [-0.2, 0.7]])
    gen = np.random.default_rng(seed)
    y = forward @ np.array([0.6, -0.3]) + 2.0 * gen.standard_normal(2)
    model = gp.LinearGaussianModel(forward, noise_var, y)
    rates = np.array([0.9, 0.7])
    return model, rates


class TestCoordinateSplit:
    def test_assemble_restores_order(self, rng):
        split = CoordinateSplit.from_selected([4, 1], 6)
        w = rng.standard_normal(6)
        sel, comp = split.split(w)
        assert np.array_equal(split.assemble(sel, comp), w)

    @given(st.integers(2, 30), st.data())
    @settings(max_examples=40, deadline=None)
    def test_roundtrip_property(self, d, data):
        r = data.draw(st.integers(1, d))
        idx = data.draw(
            st.lists(st.integers(0, d - 1), min_size=r, max_size=r, unique=True)
        )
        split = CoordinateSplit.from_selected(idx, d)
        assert np.array_equal(np.sort(np.concatenate([split.selected, split.complement])), np.arange(d))
        w = np.arange(d, dtype=float)
        assert np.array_equal(split.assemble(*split.split(w)), w)


class TestDiagnostics:
    def test_zero_column_gives_zero_entry(self, rng):
        d, m = 4, 3
        a = rng.standard_normal((m, d))
        a[:, 1] = 0.0
        model = gp.LinearGaussianModel(a, 1.0, rng.standard_normal(m))
        ev = WSpaceEvaluator(model, np.full(d, 1.5))
        samples = rng.uniform(0.3, 2.0, (6, d))
        diag = estimate_diagnostic_w(ev, samples)
        assert diag.h[1] == 0.0

    def test_duplicate_samples_average(self, rng):
        ev = WSpaceEvaluator(random_model(rng, 3, 2), np.ones(3))
        w = rng.uniform(0.3, 2.0, 3)
        one = estimate_diagnostic_w(ev, w[None, :])
        two = estimate_diagnostic_w(ev, np.stack([w, w]))
        assert np.allclose(one.h, two.h, rtol=1e-14)

    def test_empty_sample_set_raises(self, rng):
        ev = WSpaceEvaluator(random_model(rng, 3, 2), np.ones(3))
        with pytest.raises(ArgError):
            estimate_diagnostic_w(ev, np.empty((0, 3)))

    def test_w_diagnostic_converges_to_quadrature(self):
        model, rates = weak_data_toy()
        oracle = WSpaceOracle(model, rates)
        target = oracle.diagnostic()
        ev = WSpaceEvaluator(model, rates)
        mixing = gp.ExponentialMixing(rates)
        samples = mixing.sample(10000, np.random.default_rng(1))
        plain = estimate_diagnostic_w(ev, samples)
        # importance weights towards the posterior
        logw = np.array(
            [ev.log_density_w(s) + rates @ s for s in samples]  # log pi(y|w)
        )
        weights = np.exp(logw - logw.max())
        weighted = estimate_diagnostic_w(ev, samples, weights=weights)
        assert np.abs(plain.h / target - 1.0).max() < 0.10
        assert np.abs(weighted.h / target - 1.0).max() < 0.10

    def test_x_diagnostic_zero_residual_sample(self, rng):
        d, m = 3, 2
        model = random_model(rng, d, m)
        prior = gp.LaplacePrior(np.ones(d))
        x_exact = np.linalg.lstsq(model.forward.to_array(), model.data, rcond=None)[0]
        diag = estimate_diagnostic_x(model, prior, x_exact[None, :])
        assert np.abs(diag.h).max() < 1e-18

    def test_x_diagnostic_zero_column(self, rng):
        d, m = 4, 3
        a = rng.standard_normal((m, d))
        a[:, 2] = 0.0
        model = gp.LinearGaussianModel(a, 1.0, rng.standard_normal(m))
        prior = gp.LaplacePrior(np.ones(d))
        diag = estimate_diagnostic_x(model, prior, rng.standard_normal((8, d)))
        assert diag.h[2] == 0.0

    def test_x_diagnostic_converges_to_quadrature(self):
        model, rates = weak_data_toy(seed=2, noise_var=49.0)
        delta = np.sqrt(2.0 * rates)  # rates = delta^2/2
        prior = gp.LaplacePrior(delta)
        xs = XSpaceOracle(model, prior, x_lo=-10.0, x_hi=10.0, n=1200)
        atm = model.whitened_forward()
        ytv = model.whitened_data()
        g1 = -(
            atm[0, 0] * (atm[0, 0] * xs.x1 + atm[0, 1] * xs.x2 - ytv[0])
            + atm[1, 0] * (atm[1, 0] * xs.x1 + atm[1, 1] * xs.x2 - ytv[1])
        )
        g2 = -(
            atm[0, 1] * (atm[0, 0] * xs.x1 + atm[0, 1] * xs.x2 - ytv[0])
            + atm[1, 1] * (atm[1, 0] * xs.x1 + atm[1, 1] * xs.x2 - ytv[1])
        )
        pw = xs.pdf * xs.weights
        target = np.array(
            [(g1**2 * pw).sum(), (g2**2 * pw).sum()]
        ) / prior.rates**2
        samples = prior.sample(10000, np.random.default_rng(3))
        resid = samples @ atm.T - ytv
        loglik = -0.5 * (resid**2).sum(axis=1)
        weights = np.exp(loglik - loglik.max())
        weighted = estimate_diagnostic_x(model, prior, samples, weights=weights)
        plain = estimate_diagnostic_x(model, prior, samples)
        assert np.abs(weighted.h / target - 1.0).max() < 0.10
        assert np.abs(plain.h / target - 1.0).max() < 0.10


class TestSplitSelection:
    def test_exact_tail_example(self):
        h = np.array([4.0, 1.0, 0.0, 0.0])
        split, curve = split_by_diagnostic(h, tau=0.1, r_max=4)
        assert split.selected.tolist() == [0, 1]
        assert curve[1] == 0.0
        assert curve[0] == pytest.approx(2.0)

    def test_tie_break_lowest_index(self):
        h = np.ones(5)
        split, _ = split_by_diagnostic(h, tau=0.0, r_max=2)
        assert split.selected.tolist() == [0, 1]

    def test_degenerate_diagnostic_warns(self):
        with pytest.warns(RuntimeWarning, match="degenerate"):
            split, curve = split_by_diagnostic(np.zeros(4), tau=0.5, r_max=3)
        assert split.r == 1
        assert np.all(curve == 0.0)

    def test_split_top_r(self):
        h = np.array([0.1, 5.0, 3.0])
        split = split_top_r(h, 2)
        assert split.selected.tolist() == [1, 2]

    @given(
        st.lists(st.floats(0.0, 1e6, allow_nan=False), min_size=1, max_size=40)
    )
    @settings(max_examples=60, deadline=None)
    def test_epsilon_curve_properties(self, values):
        h = np.asarray(values)
        curve = _epsilon_curve(h)
        assert curve[-1] == 0.0
        assert np.all(np.diff(curve) <= 1e-12)  # non-increasing
        # increments shrink: eps(r) - eps(r+1) = 2 h_(r-th largest)
        inc = -np.diff(curve)
        assert np.all(np.diff(inc) <= 1e-9 * max(1.0, h.max()))


class TestCcsWSampler:
    def test_full_split_matches_quadrature(self):
        model, prior, _ = gp.build_toy(seed=4)
        rates = prior.mixing_rates()
        ev = WSpaceEvaluator(model, rates)
        split = CoordinateSplit.from_selected([0, 1], 2)
        chains = ccs_w_sampler(
            ev, split, MalaConfig(n_samples=6000, n_chains=4, seed=14)
        )
        assert np.all(chains.samples > 0.0)
        oracle = WSpaceOracle(model, rates)
        for axis in (0, 1):
            grid, cdf = oracle.marginal_cdf(axis)
            ks = ks_distance(chains.pooled()[:, axis], grid, cdf)
            assert ks < 0.03, f"axis {axis}: ks={ks}"

    def test_minimal_split_runs_and_is_positive(self):
        model, prior, _ = gp.build_toy(seed=4)
        ev = WSpaceEvaluator(model, prior.mixing_rates())
        split = CoordinateSplit.from_selected([0], 2)
        chains = ccs_w_sampler(
            ev, split, MalaConfig(n_samples=500, n_chains=2, seed=1)
        )
        assert chains.samples.shape == (2, 500, 2)
        assert np.all(chains.samples > 0.0)

    def test_reproducible(self):
        model, prior, _ = gp.build_toy(seed=4)
        ev = WSpaceEvaluator(model, prior.mixing_rates())
        split = CoordinateSplit.from_selected([0, 1], 2)
        cfg = MalaConfig(n_samples=200, n_chains=2, seed=8)
        a = ccs_w_sampler(ev, split, cfg)
        b = ccs_w_sampler(ev, split, cfg)
        assert np.array_equal(a.samples, b.samples)


class TestMapW:
    def test_zero_data_gives_empty_support(self, rng):
        d, m = 3, 2
        model = gp.LinearGaussianModel(
            rng.standard_normal((m, d)), 1.0, np.zeros(m)
        )
        ev = WSpaceEvaluator(model, np.full(d, 2.0))
        approx = map_w_approx(ev)
        assert approx.support_size == 0
        assert np.all(approx.w_map == 0.0)

    def test_stationarity_conditions(self, rng):
        model = random_model(rng, d=6, m=5)
        ev = WSpaceEvaluator(model, np.full(6, 0.8))
        approx = map_w_approx(ev)
        from gmixpost.mixing import sparse_map_objective

        _, grad = sparse_map_objective(ev, approx.w_map)
        sel, comp = approx.split.selected, approx.split.complement
        scale = max(1.0, np.abs(grad).max())
        if sel.size:
            assert np.abs(grad[sel]).max() < 1e-3 * scale
        if comp.size:
            assert grad[comp].min() > -1e-4 * scale

    def test_precision_is_spd(self, rng):
        model = random_model(rng, d=5, m=4)
        ev = WSpaceEvaluator(model, np.full(5, 0.6))
        approx = map_w_approx(ev)
        if approx.support_size:
            eigs = np.linalg.eigvalsh(approx.precision)
            assert eigs[0] > 0.0

    def test_sampler_r1_matches_truncated_normal(self):
        split = CoordinateSplit.from_selected([0], 2)
        approx = MapApprox(
            w_map=np.array([0.8, 0.0]),
            split=split,
            precision=np.array([[4.0]]),
            rates=np.array([1.0, 2.0]),
            objective_value=0.0,
            n_iterations=0,
        )
        draws = map_w_sampler(approx, 100_000, np.random.default_rng(0))
        assert np.all(draws > 0.0)
        dist = stats.truncnorm(-0.8 / 0.5, np.inf, loc=0.8, scale=0.5)
        ks = stats.kstest(draws[:, 0], dist.cdf).statistic
        assert ks < 0.01
        # complement follows its exponential prior
        ks2 = stats.kstest(draws[:, 1], lambda t: 1 - np.exp(-2.0 * t)).statistic
        assert ks2 < 0.01

    def test_sampler_r0_is_pure_prior(self):
        split = CoordinateSplit.from_selected([], 2)
        approx = MapApprox(
            w_map=np.zeros(2),
            split=split,
            precision=np.zeros((0, 0)),
            rates=np.array([1.5, 3.0]),
            objective_value=0.0,
            n_iterations=0,
        )
        draws = map_w_sampler(approx, 100_000, np.random.default_rng(1))
        for i, lam in enumerate((1.5, 3.0)):
            ks = stats.kstest(draws[:, i], lambda t, lam=lam: 1 - np.exp(-lam * t)).statistic
            assert ks < 0.01

    def test_sampler_draws_are_iid(self):
        split = CoordinateSplit.from_selected([0], 3)
        approx = MapApprox(
            w_map=np.array([1.2, 0.0, 0.0]),
            split=split,
            precision=np.array([[2.5]]),
            rates=np.ones(3),
            objective_value=0.0,
            n_iterations=0,
        )
        draws = map_w_sampler(approx, 20_000, np.random.default_rng(2))
        from gmixpost.diagnostics import ness_per_coordinate

        vals = ness_per_coordinate(draws[None, :, :])
        assert np.all((vals > 0.9) & (vals < 1.1))


class TestHellinger:
    def test_identical_densities_zero(self, rng):
        samples = rng.uniform(0.1, 2.0, (50, 2))
        fn = lambda w: -0.5 * float(w @ w)
        assert hellinger_bound_estimate(fn, fn, samples) == 0.0

    def test_1d_gaussian_sandwich(self):
        exact_h2 = 1.0 - np.exp(-1.0 / 16.0)
        gen = np.random.default_rng(3)
        samples = (0.5 + gen.standard_normal(100_000))[:, None]
        est = hellinger_bound_estimate(
            lambda x: -0.5 * float(x[0] ** 2),
            lambda x: -0.5 * float((x[0] - 0.5) ** 2),
            samples,
        )
        assert est >= exact_h2
        assert est < 4.0 * exact_h2

    def test_non_finite_ratio_reported(self, rng):
        samples = rng.uniform(0.1, 1.0, (5, 1))
        with pytest.raises(NumericalError, match="indices"):
            hellinger_bound_estimate(
                lambda w: np.inf, lambda w: 0.0, samples
            )

    def test_ccs_bound_exceeds_quadrature_h2(self):
        model, prior, _ = gp.build_toy(seed=4)
        rates = prior.mixing_rates()
        ev = WSpaceEvaluator(model, rates)
        oracle = WSpaceOracle(model, rates)
        mixing = gp.ExponentialMixing(rates)
        prior_w = mixing.sample(400, np.random.default_rng(0))
        diag = estimate_diagnostic_w(ev, prior_w)
        for r in (1, 2):
            split = split_top_r(diag, r)
            red = ReducedVEvaluator(ev, split)
            chains = ccs_w_sampler(
                ev, split, MalaConfig(n_samples=2500, n_chains=2, seed=5), reduced=red
            )
            sel, comp = split.selected, split.complement
            lam_comp = rates[comp]

            def approx_logpdf(w):
                v_sel = np.log(w[sel])
                return (
                    red.log_density(v_sel)
                    - float(v_sel.sum())
                    - float(lam_comp @ w[comp])
                )

            est = hellinger_bound_estimate(
                ev.log_density_w, approx_logpdf, chains.pooled()[:2000]
            )

            def grid_logpdf(w1, w2):
                out = np.empty_like(w1)
                flat = out.reshape(-1)
                ww1, ww2 = w1.reshape(-1), w2.reshape(-1)
                for i in range(flat.size):
                    flat[i] = approx_logpdf(np.array([ww1[i], ww2[i]]))
                return out

            approx_pdf = oracle.normalized(grid_logpdf)
            h2 = oracle.hellinger_sq_against(approx_pdf)
            assert est >= h2 - 1e-6, f"r={r}: est {est} < quadrature {h2}"
            if r == 2:
                assert h2 < 1e-6  # full split reproduces the exact density


class TestCcsXSampler:
    def test_full_split_matches_quadrature(self):
        model, prior, _ = gp.build_toy(seed=4)
        split = CoordinateSplit.from_selected([0, 1], 2)
        chains = ccs_x_sampler(
            model, prior, split, MalaConfig(n_samples=6000, n_chains=4, seed=21)
        )
        oracle = XSpaceOracle(model, prior)
        for axis in (0, 1):
            grid, cdf = oracle.marginal_cdf(axis)
            ks = ks_distance(chains.pooled()[:, axis], grid, cdf)
            assert ks < 0.03, f"axis {axis}: ks={ks}"

    def test_complement_pinned_at_zero(self):
        model, prior, _ = gp.build_toy(seed=4)
        split = CoordinateSplit.from_selected([1], 2)
        chains = ccs_x_sampler(
            model, prior, split, MalaConfig(n_samples=300, n_chains=2, seed=2)
        )
        assert np.all(chains.samples[:, :, 0] == 0.0)


class TestMapX:
    def test_zero_data_algebra(self, rng):
        d, m = 3, 2
        model = gp.LinearGaussianModel(rng.standard_normal((m, d)), 1.0, np.zeros(m))
        prior = gp.LaplacePrior(np.array([1.0, 2.0, 0.5]))
        approx = map_x_approx(model, prior)
        assert np.allclose(approx.x_map, 0.0, atol=1e-12)
        # z = delta * sqrt(gamma) = delta^2 / 2 at gamma = delta^2/4
        assert np.allclose(approx.hess_diag, prior.rates**2 / 2.0, rtol=1e-9)

    def test_sampler_matches_gaussian_oracle(self, rng):
        model = random_model(rng, d=3, m=3)
        prior = gp.LaplacePrior(np.array([0.8, 1.1, 0.6]))
        approx = map_x_approx(model, prior)
        at = model.whitened_forward()
        hess = at.T @ at + np.diag(approx.hess_diag)
        cov = np.linalg.inv(hess)
        n = 100_000
        draws = map_x_sampler(model, approx, n, np.random.default_rng(4))
        mcse = np.sqrt(np.diag(cov) / n)
        assert np.all(np.abs(draws.mean(axis=0) - approx.x_map) <= 4.0 * mcse)
        assert np.linalg.norm(np.cov(draws.T) - cov) <= 0.10 * np.linalg.norm(cov)
