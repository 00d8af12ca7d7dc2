from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from echodecomp import kernels
from echodecomp.errors import DomainError, NumericalError, ParameterError
from echodecomp.tsnmf import (
    TsnmfConfig,
    difference_lipschitz,
    difference_matrix,
    init_factors,
    multistart_fit,
    palm_fit,
    run_seeds,
    scale_normalize,
    smooth_gradients,
    stopping_rule,
    tsnmf_cost,
)

from oracles import central_difference, mu_nmf

BASE = TsnmfConfig(rank=3, eta=0.0, n_restarts=1, max_iter=5000, seed=1)


class TestDifferenceMatrix:
    def test_three(self):
        assert difference_matrix(3).tolist() == [[1, 0], [-1, 1], [0, -1]]

    def test_two(self):
        assert difference_matrix(2).tolist() == [[1], [-1]]

    def test_constant_row(self):
        assert not (np.full((2, 6), 3.7) @ difference_matrix(6)).any()

    @pytest.mark.parametrize("t", [0, 1, 2.5])
    def test_too_small(self, t):
        with pytest.raises(ParameterError):
            difference_matrix(t)

    @settings(max_examples=50)
    @given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 9)),
                  elements=st.floats(0, 1e6)))
    def test_product_is_column_difference(self, h):
        expected = h[:, :-1] - h[:, 1:]
        assert np.array_equal(h @ difference_matrix(h.shape[1]), expected)
        assert np.array_equal(kernels._diff(np.ascontiguousarray(h)), expected)

    @pytest.mark.parametrize("t", [2, 3, 7, 40])
    def test_lipschitz_is_spectral_norm(self, t):
        d = difference_matrix(t)
        assert difference_lipschitz(t) == pytest.approx(np.linalg.norm(d @ d.T, 2), rel=1e-12)


class TestCost:
    def test_zero_factors(self, rng):
        x = rng.random((4, 5))
        total, parts = tsnmf_cost(x, np.zeros((4, 2)), np.zeros((2, 5)), BASE)
        assert total == pytest.approx(np.sum(x ** 2), rel=1e-15)
        assert parts.smoothness == 0.0

    def test_exact_factorization(self, rng):
        w, h = rng.random((6, 2)), rng.random((2, 5))
        assert tsnmf_cost(w @ h, w, h, BASE)[0] == pytest.approx(0.0, abs=1e-24)

    def test_hand_example(self):
        x = np.eye(2)
        total, parts = tsnmf_cost(x, np.ones((2, 1)), np.ones((1, 2)), replace(BASE, eta=1.0))
        assert total == 2.0
        assert parts.reconstruction == 2.0 and parts.smoothness == 0.0

    def test_all_terms(self, rng):
        x, w, h = rng.random((5, 4)), rng.random((5, 2)), rng.random((2, 4))
        cfg = replace(BASE, eta=2.0, lam=0.3, beta_w=0.5, beta_h=0.7)
        total, parts = tsnmf_cost(x, w, h, cfg)
        assert parts.reconstruction == pytest.approx(np.sum((x - w @ h) ** 2), rel=1e-14)
        assert parts.smoothness == pytest.approx(2.0 * np.sum(np.diff(h, axis=1) ** 2), rel=1e-14)
        assert parts.l1_w == pytest.approx(0.3 * np.abs(w).sum(), rel=1e-14)
        assert parts.frob_w == pytest.approx(0.5 * np.sum(w ** 2), rel=1e-14)
        assert parts.frob_h == pytest.approx(0.7 * np.sum(h ** 2), rel=1e-14)
        assert total == pytest.approx(sum(parts), rel=1e-15)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ParameterError):
            tsnmf_cost(rng.random((4, 5)), rng.random((4, 2)), rng.random((3, 5)), BASE)


def _smooth_part(x, cfg):
    def f_w(w, h):
        return (np.sum((x - w @ h) ** 2) + cfg.eta * np.sum(np.diff(h, axis=1) ** 2)
                + cfg.beta_w * np.sum(w ** 2) + cfg.beta_h * np.sum(h ** 2))
    return f_w


@pytest.mark.parametrize("trial", range(5))
def test_gradients_match_finite_differences(trial):
    rng = np.random.default_rng(100 + trial)
    x, w, h = rng.random((6, 4)), rng.random((6, 2)), rng.random((2, 4))
    cfg = replace(BASE, rank=2, eta=1.7, beta_w=0.4, beta_h=0.9)
    f = _smooth_part(x, cfg)
    gw, gh = smooth_gradients(x, w, h, cfg)
    assert np.allclose(gw, central_difference(lambda v: f(v, h), w), rtol=1e-5, atol=1e-7)
    assert np.allclose(gh, central_difference(lambda v: f(w, v), h), rtol=1e-5, atol=1e-7)


class TestStoppingRule:
    def test_fires_after_plateau(self):
        assert stopping_rule([100, 90, 81, 72.9, 65.61, 65.60])

    def test_geometric_never_fires(self):
        trace = 100 * 0.9 ** np.arange(200)
        assert not any(stopping_rule(trace[: i + 1]) for i in range(trace.size))

    @pytest.mark.parametrize("n", range(0, 6))
    def test_short_trace(self, n):
        assert not stopping_rule([100.0 - i for i in range(n)])

    def test_window_parameter(self):
        trace = [10, 9, 8, 7.999]
        assert stopping_rule(trace, 0.005, 3)
        assert not stopping_rule(trace, 0.005, 4)

    def test_ratio_parameter(self):
        trace = [10, 9, 8, 7, 6, 5.9]  # last drop 0.1, window mean 0.82
        assert not stopping_rule(trace, 0.1, 5)
        assert stopping_rule(trace, 0.2, 5)


class TestPalm:
    def test_rank_one_recovery(self, rng):
        x = np.outer(rng.random(15) + 0.1, rng.random(8) + 0.1)
        cfg = replace(BASE, rank=1, max_iter=20000)
        model = palm_fit(x, cfg)
        assert model.mse <= 1e-8 * np.mean(x ** 2)

    def test_matches_multiplicative_oracle(self, rng):
        x = rng.random((20, 10))
        w0, h0 = init_factors(x, 3, 7)
        _, _, oracle = mu_nmf(x, w0, h0)
        model = palm_fit(x, replace(BASE, max_iter=20000), init=(w0, h0))
        assert model.cost <= oracle * 1.01

    def test_zero_input(self):
        model = palm_fit(np.zeros((5, 4)), BASE)
        assert model.cost == 0.0
        assert not (model.w @ model.h).any()

    def test_nonnegative_and_monotone(self, rng):
        x = rng.random((12, 9))
        cfg = replace(BASE, eta=3.0, lam=0.1, beta_w=0.05, beta_h=0.05, max_iter=400)
        model = palm_fit(x, cfg)
        assert (model.w >= 0).all() and (model.h >= 0).all()
        trace = np.concatenate([[model.initial_cost], model.cost_trace])
        assert np.all(np.diff(trace) <= 1e-9)

    def test_parts_sum_to_last_cost(self, rng):
        x = rng.random((8, 6))
        model = palm_fit(x, replace(BASE, eta=1.0, lam=0.2, max_iter=300))
        assert sum(model.cost_parts) == pytest.approx(model.cost_trace[-1], rel=1e-9)

    def test_iteration_cap(self, rng):
        model = palm_fit(rng.random((8, 6)), replace(BASE, max_iter=7))
        assert model.iterations == 7 and not model.converged
        assert model.cost_trace.size == 7

    def test_lasso_sparsifies_w(self, rng):
        x = rng.random((15, 10))
        dense = palm_fit(x, replace(BASE, max_iter=1000))
        sparse = palm_fit(x, replace(BASE, lam=5.0, max_iter=1000))
        assert np.count_nonzero(sparse.w) < np.count_nonzero(dense.w)

    def test_one_sweep_matches_closed_form(self, rng):
        # W step thresholds at lam / c_W: the cost carries lam * ||W||_1 with no 1/2
        x, w0, h0 = rng.random((7, 5)), rng.random((7, 2)), rng.random((2, 5))
        cfg = replace(BASE, rank=2, eta=0.7, lam=0.3, beta_w=0.2, beta_h=0.1, max_iter=1)
        c_w = 2 * (np.linalg.eigvalsh(h0 @ h0.T).max() + cfg.beta_w) * cfg.safety
        g_w = 2 * (w0 @ h0 - x) @ h0.T + 2 * cfg.beta_w * w0
        w1 = np.maximum(w0 - g_w / c_w - cfg.lam / c_w, 0.0)
        d = difference_matrix(5)
        c_h = 2 * (np.linalg.eigvalsh(w1.T @ w1).max() + cfg.eta * difference_lipschitz(5)
                   + cfg.beta_h) * cfg.safety
        g_h = 2 * w1.T @ (w1 @ h0 - x) + 2 * cfg.eta * h0 @ d @ d.T + 2 * cfg.beta_h * h0
        h1 = np.maximum(h0 - g_h / c_h, 0.0)
        model = palm_fit(x, cfg, init=(w0, h0))
        assert np.allclose(model.w, w1, rtol=1e-10, atol=1e-13)
        assert np.allclose(model.h, h1, rtol=1e-10, atol=1e-13)

    def test_negative_input(self):
        with pytest.raises(DomainError):
            palm_fit(np.array([[1.0, -1.0]]), BASE)

    def test_non_finite_input(self):
        with pytest.raises(DomainError):
            palm_fit(np.array([[1.0, np.inf]]), BASE)

    def test_nan_during_iteration(self, rng):
        x = rng.random((4, 3))
        w = np.full((4, 1), 1e200)
        h = np.full((1, 3), 1e200)  # WH overflows on the first cost evaluation
        with pytest.raises(NumericalError):
            palm_fit(x, replace(BASE, rank=1), init=(w, h))

    def test_smoothness_effect(self, rng):
        t = np.arange(30)
        x = np.outer(rng.random(12) + 0.5, 2 + np.sin(t / 5.0)) + 0.3 * rng.random((12, 30))
        rough = []
        for eta in (0.0, 10.0, 1e3, 1e5):
            model = palm_fit(x, replace(BASE, rank=2, eta=eta, max_iter=3000))
            rough.append(np.sum(np.diff(model.h, axis=1) ** 2))
        assert all(b <= a for a, b in zip(rough, rough[1:]))

    def test_column_permutation_covariance(self, rng):
        x = rng.random((10, 7))
        w0, h0 = init_factors(x, 2, 3)
        perm = rng.permutation(7)
        # a fixed iteration count, so round-off cannot shift the stopping step
        cfg = replace(BASE, rank=2, max_iter=100, stop_ratio=1e-15)
        a = palm_fit(x, cfg, init=(w0, h0))
        b = palm_fit(x[:, perm], cfg, init=(w0, h0[:, perm]))
        assert a.iterations == b.iterations == 100
        # equal up to summation order inside the matrix products
        assert np.allclose(b.h, a.h[:, perm], rtol=1e-10, atol=1e-13)
        assert np.allclose(b.w, a.w, rtol=1e-10, atol=1e-13)


class TestMultistart:
    def test_single_restart_equals_palm(self, rng):
        x = rng.random((9, 7))
        cfg = replace(BASE, max_iter=200, seed=5)
        ens = multistart_fit(x, cfg)
        single = palm_fit(x, cfg, seed=run_seeds(5, 1)[0])
        assert np.array_equal(ens.best.w, single.w)
        assert np.array_equal(ens.best.h, single.h)

    def test_deterministic_and_thread_independent(self, rng):
        x = rng.random((9, 7))
        cfg = replace(BASE, max_iter=150, n_restarts=6, seed=11)
        a = multistart_fit(x, cfg)
        b = multistart_fit(x, cfg, threads=3)
        assert a.best_index == b.best_index
        for ma, mb in zip(a.models, b.models):
            assert np.array_equal(ma.w, mb.w) and np.array_equal(ma.cost_trace, mb.cost_trace)

    def test_best_is_minimum(self, rng):
        ens = multistart_fit(rng.random((9, 7)), replace(BASE, max_iter=50, n_restarts=5))
        costs = ens.final_costs
        assert ens.best_index == int(np.flatnonzero(costs == costs.min())[0])

    def test_rank_one_runs_agree(self, rng):
        x = np.outer(rng.random(12) + 0.2, rng.random(9) + 0.2)
        ens = multistart_fit(x, replace(BASE, rank=1, n_restarts=8, max_iter=20000))
        assert np.ptp(ens.mse_per_run) <= 1e-6

    def test_seeds_distinct(self):
        seeds = run_seeds(0, 320)
        assert len(set(seeds)) == 320
        assert run_seeds(0, 5) == seeds[:5]


class TestScaleNormalize:
    def test_example(self):
        w, h = scale_normalize(np.array([[3.0], [4.0]]), np.array([[1.0, 2.0]]))
        assert w.ravel().tolist() == [0.6, 0.8]
        assert h.ravel().tolist() == [5.0, 10.0]

    def test_unit_norm_unchanged(self):
        w = np.array([[1.0, 0.0], [0.0, 1.0]])
        h = np.array([[1.0, 2.0], [3.0, 4.0]])
        w2, h2 = scale_normalize(w, h)
        assert np.array_equal(w2, w) and np.array_equal(h2, h)

    def test_reconstruction_preserved(self, rng):
        w, h = rng.random((20, 3)) * 7, rng.random((3, 11))
        w2, h2 = scale_normalize(w, h)
        assert np.allclose(w2 @ h2, w @ h, rtol=1e-12, atol=0)
        assert np.allclose(np.linalg.norm(w2, axis=0), 1.0, rtol=1e-15)

    def test_zero_column_passes_through(self):
        w = np.array([[0.0, 2.0], [0.0, 0.0]])
        h = np.array([[0.0, 0.0], [1.0, 1.0]])
        w2, h2 = scale_normalize(w, h)
        assert not w2[:, 0].any() and not h2[0].any()

    def test_accepts_model(self, rng):
        model = palm_fit(rng.random((5, 4)), replace(BASE, max_iter=20))
        w2, _ = scale_normalize(model)
        assert np.allclose(np.linalg.norm(w2, axis=0), 1.0)


class TestConfig:
    @pytest.mark.parametrize("kwargs", [dict(rank=0), dict(eta=-1.0), dict(lam=-0.1),
                                        dict(stop_ratio=1.0), dict(stop_window=0),
                                        dict(max_iter=0), dict(n_restarts=0), dict(seed=-1),
                                        dict(init_scale=0.0)])
    def test_invalid(self, kwargs):
        with pytest.raises(ParameterError):
            TsnmfConfig(**kwargs)

    def test_field_defaults(self):
        cfg = TsnmfConfig()
        assert (cfg.rank, cfg.eta, cfg.lam, cfg.beta_w, cfg.beta_h) == (3, 500000.0, 0, 0, 0)
        assert (cfg.stop_ratio, cfg.stop_window, cfg.max_iter, cfg.n_restarts) == (
            0.005, 5, 20000, 320)

    def test_init_scale_mean(self):
        w, _ = init_factors(np.full((200000, 2), 2.0), 3, 0)
        _, h = init_factors(np.full((2, 200000), 2.0), 3, 1)
        # mean(WH) = sum_k mean(w_k) mean(h_k)
        assert np.mean(w, axis=0) @ np.mean(h, axis=1) == pytest.approx(2.0, rel=0.01)
