"""Mixing-posterior evaluators: densities, derivatives, fast paths."""

import numpy as np
import pytest
import sympy

import gmixpost as gp
from gmixpost.errors import SupportError
from gmixpost.mixing import (
    ReducedVEvaluator,
    VSpaceEvaluator,
    WSpaceEvaluator,
    sparse_map_objective,
)

from conftest import random_model


def make_evaluator(rng, d, m, noise="diag"):
    model = random_model(rng, d, m, noise=noise)
    rates = rng.uniform(0.5, 3.0, d)
    return WSpaceEvaluator(model, rates), model


def fd_gradient(fun, x, rel=1e-6):
    out = np.empty(x.size)
    for i in range(x.size):
        h = rel * max(abs(x[i]), 1.0)
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        out[i] = (fun(xp) - fun(xm)) / (2.0 * h)
    return out


class TestWSpaceDensity:
    def test_value_at_zero_is_zero(self, rng):
        for m, d in ((2, 3), (5, 3)):
            ev, _ = make_evaluator(rng, d, m)
            assert ev.log_density_w(np.zeros(d)) == 0.0

    def test_zero_data_maximized_at_origin(self, rng):
        d, m = 4, 3
        model = gp.LinearGaussianModel(
            rng.standard_normal((m, d)), 1.0, np.zeros(m)
        )
        ev = WSpaceEvaluator(model, np.full(d, 1.2))
        for _ in range(10):
            w = rng.uniform(0.01, 3.0, d)
            value = ev.log_density_w(w)
            assert value <= -ev.rates @ w + 1e-12
            assert value < ev.log_density_w(np.zeros(d))

    @pytest.mark.parametrize("m,d", [(2, 3), (5, 3)])
    def test_matches_model_core_up_to_constant(self, rng, m, d):
        ev, model = make_evaluator(rng, d, m)
        spec = gp.GaussianComponentSpec.scale_mixture(d)
        mixing = gp.ExponentialMixing(ev.rates)
        ws = [rng.uniform(0.05, 3.0, d) for _ in range(10)]
        ours = np.array([ev.log_density_w(w) for w in ws])
        ref = np.array([gp.log_mixing_posterior(model, spec, mixing, w) for w in ws])
        assert np.abs((ours - ours[0]) - (ref - ref[0])).max() < 1e-9

    def test_negative_w_raises(self, rng):
        ev, _ = make_evaluator(rng, 3, 2)
        with pytest.raises(SupportError):
            ev.log_density_w(np.array([0.5, -0.1, 1.0]))

    def test_row_scaling_invariance(self, rng):
        d, m = 3, 4
        a = rng.standard_normal((m, d))
        y = rng.standard_normal(m)
        rates = rng.uniform(0.5, 2.0, d)
        base = WSpaceEvaluator(gp.LinearGaussianModel(a, 1.0, y), rates)
        for c in (2.0, 3.0):
            scaled = WSpaceEvaluator(
                gp.LinearGaussianModel(c * a, c**2, c * y), rates
            )
            for _ in range(5):
                w = rng.uniform(0.1, 2.0, d)
                assert scaled.log_density_w(w) == pytest.approx(
                    base.log_density_w(w), rel=1e-12, abs=1e-12
                )

    def test_deterministic_bits(self, rng):
        ev, _ = make_evaluator(rng, 6, 4)
        w = rng.uniform(0.1, 2.0, 6)
        assert ev.log_density_w(w) == ev.log_density_w(w.copy())
        g1 = ev.grad_log_density_w(w)
        g2 = ev.grad_log_density_w(w.copy())
        assert np.array_equal(g1, g2)


class TestWSpaceGradient:
    @pytest.mark.parametrize("m,d", [(2, 3), (6, 4)])
    def test_finite_differences(self, rng, m, d):
        ev, _ = make_evaluator(rng, d, m)
        for _ in range(5):
            w = rng.uniform(0.3, 2.5, d)
            grad = ev.grad_log_density_w(w)
            fd = np.empty(d)
            for i in range(d):
                h = 1e-5 * w[i]
                wp, wm = w.copy(), w.copy()
                wp[i] += h
                wm[i] -= h
                fd[i] = (ev.log_density_w(wp) - ev.log_density_w(wm)) / (2 * h)
            assert np.abs((grad - fd) / (np.abs(fd) + 1e-10)).max() < 1e-5

    def test_insensitive_coordinate_exact(self, rng):
        d, m = 4, 3
        a = rng.standard_normal((m, d))
        a[:, 2] = 0.0
        model = gp.LinearGaussianModel(a, 0.7, rng.standard_normal(m))
        rates = np.array([1.0, 2.0, 3.0, 0.5])
        ev = WSpaceEvaluator(model, rates)
        w = rng.uniform(0.2, 2.0, d)
        grad = ev.grad_log_density_w(w)
        assert grad[2] == -rates[2]

    def test_swap_equivariance(self):
        # two identical columns, equal rates, symmetric w
        a = np.array([[1.0, 1.0, 0.2], [0.3, 0.3, -0.4]])
        model = gp.LinearGaussianModel(a, 1.0, np.array([0.9, -0.2]))
        ev = WSpaceEvaluator(model, np.array([2.0, 2.0, 1.0]))
        w = np.array([0.8, 0.8, 1.5])
        grad = ev.grad_log_density_w(w)
        assert grad[0] == pytest.approx(grad[1], rel=1e-12)

    def test_requires_strict_positivity(self, rng):
        ev, _ = make_evaluator(rng, 3, 2)
        with pytest.raises(SupportError):
            ev.grad_log_density_w(np.array([0.0, 1.0, 1.0]))

    def test_value_and_grad_consistent(self, rng):
        for m, d in ((2, 4), (6, 4)):
            ev, _ = make_evaluator(rng, d, m)
            w = rng.uniform(0.2, 2.0, d)
            value, grad = ev.value_and_grad_w(w)
            assert value == pytest.approx(ev.log_density_w(w), rel=1e-12, abs=1e-12)
            assert np.allclose(grad, ev.grad_log_density_w(w), rtol=1e-12, atol=1e-12)


class TestWSpaceHessian:
    @pytest.mark.parametrize("m,d", [(3, 4), (6, 4)])
    def test_finite_differences_of_gradient(self, rng, m, d):
        ev, _ = make_evaluator(rng, d, m)
        w = rng.uniform(0.3, 2.0, d)
        hess = ev.hessian_log_density_w(w)
        fd = np.empty((d, d))
        for i in range(d):
            h = 1e-5 * w[i]
            wp, wm = w.copy(), w.copy()
            wp[i] += h
            wm[i] -= h
            fd[:, i] = (ev.grad_log_density_w(wp) - ev.grad_log_density_w(wm)) / (2 * h)
        assert np.abs(hess - fd).max() < 1e-4 * np.abs(hess).max()

    def test_scalar_symbolic_oracle(self):
        # d = m = 1: compare against the symbolic second derivative
        a_val, sigma2, y_val, lam_val = 0.8, 0.5, 1.3, 1.7
        model = gp.LinearGaussianModel([[a_val]], sigma2, [y_val])
        ev = WSpaceEvaluator(model, [lam_val])

        w = sympy.symbols("w", positive=True)
        ahat = a_val**2 / sigma2
        bhat = a_val * y_val / sigma2
        expr = (
            -lam_val * w
            - sympy.Rational(1, 2) * sympy.log(ahat * w + 1)
            + sympy.Rational(1, 2) * bhat**2 * w / (ahat * w + 1)
        )
        d2 = sympy.lambdify(w, sympy.diff(expr, w, 2), "numpy")
        for w_val in (0.2, 0.9, 2.5):
            ours = ev.hessian_log_density_w(np.array([w_val]))[0, 0]
            assert ours == pytest.approx(float(d2(w_val)), rel=1e-10)

    def test_symmetry_exact(self, rng):
        ev, _ = make_evaluator(rng, 5, 3)
        w = rng.uniform(0.2, 2.0, 5)
        hess = ev.hessian_log_density_w(w)
        assert np.array_equal(hess, hess.T)


class TestVSpace:
    def test_jacobian_identity(self, rng):
        ev, _ = make_evaluator(rng, 4, 3)
        vev = VSpaceEvaluator(ev)
        for _ in range(6):
            v = rng.standard_normal(4)
            lhs = vev.log_density_v(v)
            rhs = ev.log_density_w(np.exp(v)) + v.sum()
            assert lhs == pytest.approx(rhs, abs=1e-9)

    def test_gradient_finite_differences(self, rng):
        ev, _ = make_evaluator(rng, 4, 3)
        vev = VSpaceEvaluator(ev)
        for _ in range(5):
            v = rng.uniform(-1.5, 1.5, 4)
            grad = vev.grad_log_density_v(v)
            fd = fd_gradient(vev.log_density_v, v)
            assert np.abs((grad - fd) / (np.abs(fd) + 1e-10)).max() < 1e-5

    def test_prior_mean_point_is_finite(self, rng):
        ev, _ = make_evaluator(rng, 3, 2)
        vev = VSpaceEvaluator(ev)
        v = np.log(1.0 / ev.rates)
        assert np.isfinite(vev.log_density_v(v))
        assert np.all(np.isfinite(vev.grad_log_density_v(v)))

    def test_out_of_range_raises(self, rng):
        ev, _ = make_evaluator(rng, 3, 2)
        vev = VSpaceEvaluator(ev)
        bad = np.array([0.0, 800.0, 0.0])
        with pytest.raises(SupportError):
            vev.log_density_v(bad)

    def test_value_and_grad_consistent(self, rng):
        ev, _ = make_evaluator(rng, 4, 3)
        vev = VSpaceEvaluator(ev)
        v = rng.standard_normal(4)
        value, grad = vev.value_and_grad_v(v)
        assert value == pytest.approx(vev.log_density_v(v), rel=1e-12)
        assert np.allclose(grad, vev.grad_log_density_v(v), rtol=1e-12, atol=1e-12)


class TestReducedEvaluator:
    def test_matches_full_at_embedded_points(self, rng):
        d, m, r = 20, 14, 4
        ev, _ = make_evaluator(rng, d, m)
        vev = VSpaceEvaluator(ev)
        split = gp.CoordinateSplit.from_selected(
            rng.choice(d, size=r, replace=False), d
        )
        red = ReducedVEvaluator(ev, split)
        vals_red, vals_full = [], []
        for _ in range(8):
            v_i = rng.uniform(-1.5, 1.5, r)
            vals_red.append(red.log_density(v_i))
            vals_full.append(vev.log_density_v(red.embed(v_i)))
        vals_red, vals_full = np.asarray(vals_red), np.asarray(vals_full)
        diffs = (vals_red - vals_red[0]) - (vals_full - vals_full[0])
        assert np.abs(diffs).max() < 1e-9
        # the exposed constant reconciles absolute values
        assert np.abs(vals_red + red.log_offset - vals_full).max() < 1e-8

    def test_full_split_degenerates_to_v_space(self, rng):
        d, m = 6, 5
        ev, _ = make_evaluator(rng, d, m)
        vev = VSpaceEvaluator(ev)
        split = gp.CoordinateSplit.from_selected(np.arange(d), d)
        red = ReducedVEvaluator(ev, split)
        assert red.log_offset == pytest.approx(0.0, abs=1e-12)
        for _ in range(5):
            v = rng.uniform(-1.0, 1.0, d)
            assert red.log_density(v) == pytest.approx(
                vev.log_density_v(v), rel=1e-9, abs=1e-9
            )

    def test_gradient_finite_differences(self, rng):
        d, m, r = 12, 9, 5
        ev, _ = make_evaluator(rng, d, m)
        split = gp.CoordinateSplit.from_selected(
            rng.choice(d, size=r, replace=False), d
        )
        red = ReducedVEvaluator(ev, split)
        for _ in range(4):
            v_i = rng.uniform(-1.0, 1.0, r)
            grad = red.grad(v_i)
            fd = fd_gradient(red.log_density, v_i)
            assert np.abs((grad - fd) / (np.abs(fd) + 1e-10)).max() < 1e-5


def dense_objective_oracle(ev, w):
    """Naive dense value/gradient of -log pi(w|y), valid for w >= 0."""
    at = ev.at if not ev.at_sparse else ev.at.toarray()
    gram = at.T @ at
    d, m = ev.d, ev.m
    sw = np.sqrt(w)
    mat = sw[:, None] * gram * sw[None, :] + np.eye(d)
    sign, logdet = np.linalg.slogdet(mat)
    assert sign > 0
    sb = sw * ev.bhat
    value = float(ev.rates @ w + 0.5 * logdet - 0.5 * sb @ np.linalg.solve(mat, sb))
    s = (at * w) @ at.T + np.eye(m)
    s_inv_at = np.linalg.solve(s, at)
    diag_k = np.einsum("ij,ij->j", at, s_inv_at)
    z = ev.bhat - at.T @ np.linalg.solve(s, at @ (w * ev.bhat))
    grad = ev.rates + 0.5 * diag_k - 0.5 * z**2
    return value, grad


class TestSparseMapObjective:
    @pytest.mark.parametrize("d,m,r", [(50, 35, 6), (30, 40, 5)])
    def test_agrees_with_dense_oracle(self, rng, d, m, r):
        ev, _ = make_evaluator(rng, d, m)
        support = np.sort(rng.choice(d, size=r, replace=False))
        w = np.zeros(d)
        w[support] = rng.uniform(0.2, 2.0, r)
        value, grad = sparse_map_objective(ev, w)
        ref_value, ref_grad = dense_objective_oracle(ev, w)
        assert value == pytest.approx(ref_value, rel=1e-8, abs=1e-8)
        assert np.abs(grad - ref_grad).max() < 1e-8 * max(1.0, np.abs(ref_grad).max())

    def test_empty_support(self, rng):
        ev, _ = make_evaluator(rng, 5, 4)
        value, grad = sparse_map_objective(ev, np.zeros(5))
        assert value == 0.0
        expected = ev.rates + 0.5 * ev.gram_diag - 0.5 * ev.bhat**2
        assert np.allclose(grad, expected, rtol=1e-14)

    def test_full_support_matches_dense(self, rng):
        d, m = 8, 6
        ev, _ = make_evaluator(rng, d, m)
        w = rng.uniform(0.2, 2.0, d)
        value, grad = sparse_map_objective(ev, w)
        assert value == pytest.approx(-ev.log_density_w(w), rel=1e-10)
        assert np.allclose(grad, -ev.grad_log_density_w(w), rtol=1e-8, atol=1e-10)
