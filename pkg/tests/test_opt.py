import itertools

import numpy as np
import pytest

from factorport.errors import ConditioningError, InputError, ParameterError
from factorport.opt import minvar_long_only, minvar_turnover_penalized, minvar_unconstrained


def grid_simplex_2(objective, resolution=1e-4):
    """Brute-force search over the 2-asset simplex."""
    w2 = np.arange(0.0, 1.0 + resolution, resolution)
    best, best_val = None, np.inf
    for v in w2:
        w = np.array([1.0 - v, v])
        val = objective(w)
        if val < best_val:
            best, best_val = w, val
    return best


def grid_simplex_3(objective, resolution=0.005):
    best, best_val = None, np.inf
    steps = np.arange(0.0, 1.0 + resolution, resolution)
    for a, b in itertools.product(steps, steps):
        if a + b > 1.0 + 1e-12:
            continue
        w = np.array([a, b, 1.0 - a - b])
        val = objective(w)
        if val < best_val:
            best, best_val = w, val
    return best


class TestLongOnly:
    def test_identity_gives_equal_weights(self):
        res = minvar_long_only(np.eye(3))
        np.testing.assert_allclose(res.weights, np.full(3, 1 / 3), atol=1e-10)

    def test_diagonal_closed_form(self):
        res = minvar_long_only(np.diag([1.0, 4.0]))
        np.testing.assert_allclose(res.weights, [0.8, 0.2], atol=1e-10)

    def test_vertex_solution_matches_grid(self):
        sigma = np.array([[1.0, 2.0], [2.0, 5.0]])
        res = minvar_long_only(sigma)
        oracle = grid_simplex_2(lambda w: w @ sigma @ w)
        assert np.abs(res.weights - oracle).max() < 1e-3
        np.testing.assert_allclose(res.weights, [1.0, 0.0], atol=1e-10)

    def test_three_asset_grid_oracle(self):
        sigma = np.array([[1.0, 0.3, -0.2], [0.3, 2.0, 0.1], [-0.2, 0.1, 1.5]])
        res = minvar_long_only(sigma)
        oracle = grid_simplex_3(lambda w: w @ sigma @ w)
        assert np.abs(res.weights - oracle).max() < 1e-2

    def test_non_finite_rejected(self):
        with pytest.raises(InputError):
            minvar_long_only(np.array([[1.0, np.nan], [np.nan, 1.0]]))

    def test_diagonal_exact_formula(self):
        d = np.array([0.5, 1.0, 2.0, 4.0, 8.0])
        res = minvar_long_only(np.diag(d))
        expected = (1 / d) / (1 / d).sum()
        np.testing.assert_allclose(res.weights, expected, atol=1e-9)

    def test_kkt_and_dominance_on_random_instances(self):
        rng = np.random.default_rng(8)
        for _ in range(25):
            n = rng.integers(2, 8)
            a = rng.normal(size=(n + 3, n))
            sigma = a.T @ a / (n + 3)
            res = minvar_long_only(sigma)
            w = res.weights
            assert res.kkt_residual <= 1e-8
            obj = w @ sigma @ w
            assert obj <= np.full(n, 1 / n) @ sigma @ np.full(n, 1 / n) + 1e-12
            for i in range(n):
                e = np.zeros(n)
                e[i] = 1.0
                assert obj <= e @ sigma @ e + 1e-12


class TestUnconstrained:
    def test_identity(self):
        res = minvar_unconstrained(np.eye(4))
        np.testing.assert_allclose(res.weights, np.full(4, 0.25))

    def test_closed_form_two_assets(self):
        sigma = np.array([[1.0, 2.0], [2.0, 5.0]])
        res = minvar_unconstrained(sigma)
        # direct solve oracle
        y = np.linalg.solve(sigma, np.ones(2))
        np.testing.assert_allclose(res.weights, y / y.sum(), atol=1e-12)
        np.testing.assert_allclose(res.weights, [1.5, -0.5], atol=1e-12)

    def test_rank_deficient_rejected(self):
        v = np.array([1.0, 2.0])
        with pytest.raises(ConditioningError):
            minvar_unconstrained(np.outer(v, v))


class TestTurnoverPenalized:
    def test_zero_kappa_equals_long_only(self):
        sigma = np.array([[1.0, 0.2], [0.2, 2.0]])
        w0 = np.array([0.3, 0.7])
        a = minvar_turnover_penalized(sigma, w0, kappa=0.0)
        b = minvar_long_only(sigma)
        np.testing.assert_array_equal(a.weights, b.weights)

    def test_huge_kappa_returns_previous(self):
        sigma = np.diag([1.0, 4.0, 2.0])
        w0 = np.array([0.2, 0.5, 0.3])
        res = minvar_turnover_penalized(sigma, w0, kappa=1e6)
        assert np.abs(res.weights - w0).max() < 1e-6

    def test_matches_grid_oracle(self):
        sigma = np.diag([1.0, 4.0])
        w0 = np.array([0.5, 0.5])
        kappa = 0.01
        res = minvar_turnover_penalized(sigma, w0, kappa=kappa)
        oracle = grid_simplex_2(lambda w: w @ sigma @ w + kappa * np.abs(w - w0).sum())
        assert np.abs(res.weights - oracle).max() < 1e-3

    def test_kappa_monotonicity_on_fixed_instance(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=(9, 5))
        sigma = a.T @ a / 9
        w0 = np.array([0.1, 0.3, 0.2, 0.25, 0.15])
        prev_obj, prev_dist = -np.inf, np.inf
        for kappa in [0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0]:
            res = minvar_turnover_penalized(sigma, w0, kappa=kappa)
            w = res.weights
            obj = w @ sigma @ w + kappa * np.abs(w - w0).sum()
            dist = np.abs(w - w0).sum()
            assert obj >= prev_obj - 1e-10
            assert dist <= prev_dist + 1e-8
            prev_obj, prev_dist = obj, dist

    def test_invalid_inputs(self):
        sigma = np.eye(2)
        with pytest.raises(ParameterError):
            minvar_turnover_penalized(sigma, np.array([0.6, 0.6]))
        with pytest.raises(ParameterError):
            minvar_turnover_penalized(sigma, np.array([0.5, 0.5]), kappa=-1.0)

    def test_weights_stay_long_only(self):
        rng = np.random.default_rng(12)
        a = rng.normal(size=(8, 4))
        sigma = a.T @ a / 8
        w0 = np.array([0.4, 0.1, 0.25, 0.25])
        res = minvar_turnover_penalized(sigma, w0, kappa=0.002)
        assert res.weights.min() >= -1e-10
        assert res.weights.sum() == pytest.approx(1.0)
