"""Linear RTO: exactness of posterior-component draws, CGLS behavior."""

import numpy as np
import pytest

import gmixpost as gp
from gmixpost.errors import NumericalError
from gmixpost.rto import RtoWorkspace, cgls, linear_rto_draws, linear_rto_sample

from conftest import random_model, random_spd


class TestCgls:
    def test_solves_overdetermined_least_squares(self, rng):
        m, d = 12, 5
        a = rng.standard_normal((m, d))
        z = rng.standard_normal(m)
        x, iters = cgls(lambda v: a @ v, lambda r: a.T @ r, z, d)
        ref, *_ = np.linalg.lstsq(a, z, rcond=None)
        assert np.allclose(x, ref, atol=1e-9)
        assert iters <= 10 * d

    def test_batched_matches_single(self, rng):
        m, d = 8, 4
        a = rng.standard_normal((m, d))
        z = rng.standard_normal((m, 6))
        xb, _ = cgls(lambda v: a @ v, lambda r: a.T @ r, z, d)
        for j in range(6):
            xj, _ = cgls(lambda v: a @ v, lambda r: a.T @ r, z[:, j], d)
            assert np.allclose(xb[:, j], xj, atol=1e-10)

    def test_column_scaling_preserves_solution(self, rng):
        m, d = 10, 4
        a = rng.standard_normal((m, d)) * np.array([1.0, 10.0, 0.1, 5.0])
        z = rng.standard_normal(m)
        x_plain, _ = cgls(lambda v: a @ v, lambda r: a.T @ r, z, d)
        scale = np.sqrt(np.einsum("ij,ij->j", a, a))
        x_scaled, _ = cgls(
            lambda v: a @ v, lambda r: a.T @ r, z, d, col_scale=scale
        )
        assert np.allclose(x_plain, x_scaled, atol=1e-9)

    def test_nonconvergence_raises_with_residual(self, rng):
        m, d = 30, 20
        a = rng.standard_normal((m, d))
        z = rng.standard_normal(m)
        with pytest.raises(NumericalError, match="relative residual"):
            cgls(lambda v: a @ v, lambda r: a.T @ r, z, d, max_iter=1)


class TestRtoExactness:
    def test_scalar_case_moments(self):
        model = gp.LinearGaussianModel([[1.0]], 1.0, [2.0])
        spec = gp.GaussianComponentSpec.scale_mixture(1)
        draws = linear_rto_draws(model, spec, [1.0], 100000, np.random.default_rng(0))
        assert draws.mean() == pytest.approx(1.0, abs=0.01)
        assert draws.var() == pytest.approx(0.5, abs=0.02)

    def test_random_instance_against_dense_oracle(self, rng):
        model = random_model(rng, d=6, m=4, noise="diag")
        spec = gp.GaussianComponentSpec.scale_mixture(6)
        w = rng.uniform(0.2, 2.0, 6)
        n = 200000
        draws = linear_rto_draws(model, spec, w, n, np.random.default_rng(1))
        comp = gp.posterior_component(model, spec, w)
        mean, cov = comp.mean(), comp.covariance()
        mcse = np.sqrt(np.diag(cov) / n)
        assert np.all(np.abs(draws.mean(axis=0) - mean) <= 4.0 * mcse)
        emp = np.cov(draws.T)
        assert np.linalg.norm(emp - cov) <= 0.10 * np.linalg.norm(cov)

    def test_dense_prior_covariance_path(self, rng):
        d, m = 4, 3
        model = random_model(rng, d, m)
        prior_cov = random_spd(rng, d, scale=0.5)
        mean_pr = rng.standard_normal(d)
        spec = gp.GaussianComponentSpec(d, lambda w: mean_pr, lambda w: prior_cov)
        n = 200000
        draws = linear_rto_draws(model, spec, None, n, np.random.default_rng(2))
        comp = gp.posterior_component(model, spec, None)
        mean, cov = comp.mean(), comp.covariance()
        mcse = np.sqrt(np.diag(cov) / n)
        assert np.all(np.abs(draws.mean(axis=0) - mean) <= 4.0 * mcse)
        assert np.linalg.norm(np.cov(draws.T) - cov) <= 0.10 * np.linalg.norm(cov)

    def test_degenerate_prior_pins_coordinate(self, rng):
        model = random_model(rng, d=3, m=3)
        spec = gp.GaussianComponentSpec.scale_mixture(3)
        w = np.array([1.0, 1e-10, 0.5])
        draw = linear_rto_sample(model, spec, w, np.random.default_rng(3))
        assert abs(draw[1]) < 1e-4  # prior mean is zero

    def test_single_draw_matches_first_of_batch(self, rng):
        model = random_model(rng, d=4, m=3)
        spec = gp.GaussianComponentSpec.scale_mixture(4)
        w = rng.uniform(0.3, 2.0, 4)
        single = linear_rto_sample(model, spec, w, np.random.default_rng(5))
        batch = linear_rto_draws(model, spec, w, 1, np.random.default_rng(5))
        assert np.array_equal(single, batch[0])


class TestRtoReproducibility:
    def test_identical_seed_identical_bits(self, rng):
        model = random_model(rng, d=5, m=4)
        spec = gp.GaussianComponentSpec.scale_mixture(5)
        w = rng.uniform(0.3, 2.0, 5)
        a = linear_rto_draws(model, spec, w, 64, np.random.default_rng(9))
        b = linear_rto_draws(model, spec, w, 64, np.random.default_rng(9))
        assert np.array_equal(a, b)

    def test_workspace_reuse_matches_oneshot(self, rng):
        model = random_model(rng, d=5, m=4)
        spec = gp.GaussianComponentSpec.scale_mixture(5)
        w = rng.uniform(0.3, 2.0, 5)
        mean, factor = spec.component(w)
        ws = RtoWorkspace(model)
        a = ws.draw(mean, factor, 16, np.random.default_rng(4))
        b = linear_rto_draws(model, spec, w, 16, np.random.default_rng(4))
        assert np.array_equal(a, b)
