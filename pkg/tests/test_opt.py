import numpy as np
import pytest

from delprop import (BINARY_LOGISTIC, LINEAR, ConfigError, DeletionRequest,
                     Hyperparams, InterpolationTable, TrainingDataset,
                     build_eigen_cache_linear, build_eigen_cache_logistic,
                     build_schedule, capture, extract_coeffs, l2_dist,
                     opt_linear, opt_logistic, priu_logistic, retrain, train,
                     validation_accuracy)
from conftest import make_binary, make_linear, quick_run


def gd_naive(M, N, n, eta, lam, tau, w0=None):
    """Reference t-step GD linear recursion."""
    w = np.zeros(M.shape[0]) if w0 is None else w0.copy()
    A = (1 - eta * lam) * np.eye(M.shape[0]) - (2 * eta / n) * M
    b = (2 * eta / n) * N
    for _ in range(tau):
        w = A @ w + b
    return w


def orthogonal_rows_dataset(m=4, copies=6, seed=0):
    """Every feature row lies along one of m fixed orthonormal directions,
    so any removal keeps the eigenvectors of X^T X unchanged."""
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.normal(size=(m, m)))
    rows = []
    for k in range(m):
        for c in range(copies):
            rows.append((1.0 + 0.3 * k + 0.05 * c) * Q[:, k])
    X = np.array(rows)
    y = rng.normal(size=len(rows))
    return TrainingDataset(X, y, np.arange(len(rows)), LINEAR), Q


class TestEigenCache:
    def test_reconstruction_fidelity(self):
        ds = make_linear(n=80, m=6)
        ec = build_eigen_cache_linear(ds)
        X = np.asarray(ds.features)
        M = X.T @ X
        rec = (ec.Q * ec.eigenvalues) @ ec.Q_inv
        assert np.linalg.norm(rec - M) / np.linalg.norm(M) <= 1e-8

    def test_q_is_orthogonal(self):
        ds = make_linear(n=50, m=5)
        ec = build_eigen_cache_linear(ds)
        np.testing.assert_allclose(ec.Q @ ec.Q_inv, np.eye(5), atol=1e-12)


class TestOptLinear:
    def test_empty_removal_matches_gd_training(self):
        ds = make_linear(n=100, m=5, seed=2)
        hp = Hyperparams(None, 0.1, ds.n, 150, 0, LINEAR)
        sched = build_schedule(ds.n, hp)
        run = train(ds, hp, sched)
        ec = build_eigen_cache_linear(ds)
        w_opt, rep = opt_linear(ds, ec, run.hp, DeletionRequest([]))
        assert rep.details["semantics"] == "gd"
        np.testing.assert_allclose(w_opt.w, run.final.w, atol=1e-8)

    def test_eigenvalues_unchanged_without_removal(self):
        ds = make_linear(n=60, m=4)
        ec = build_eigen_cache_linear(ds)
        hp = Hyperparams(0.01, 0.1, ds.n, 10, 0, LINEAR)
        # with an empty request the recurrence uses c directly; probe via
        # the public result being identical for two empty requests
        a, _ = opt_linear(ds, ec, hp, DeletionRequest([]))
        b, _ = opt_linear(ds, ec, hp, DeletionRequest([]))
        np.testing.assert_array_equal(a.w, b.w)

    def test_diagonal_recurrence_equals_naive_gd(self):
        rng = np.random.default_rng(7)
        for trial in range(5):
            m = 5
            X = rng.normal(size=(30, m))
            y = rng.normal(size=30)
            ds = TrainingDataset(X, y, np.arange(30), LINEAR)
            ec = build_eigen_cache_linear(ds)
            eta = 0.02 + 0.01 * trial
            tau = int(rng.integers(5, 101))
            hp = Hyperparams(eta, 0.05, ds.n, tau, 0, LINEAR)
            w_opt, _ = opt_linear(ds, ec, hp, DeletionRequest([]))
            w_ref = gd_naive(X.T @ X, X.T @ y, 30, eta, 0.05, tau)
            assert np.abs(w_opt.w - w_ref).max() < 1e-9

    def test_orthogonal_removal_matches_exact_retrain(self):
        ds, Q = orthogonal_rows_dataset()
        n = ds.n
        hp = Hyperparams(0.05, 0.1, n, 200, 0, LINEAR)
        ec = build_eigen_cache_linear(ds)
        removed = [1, 7, 13]  # one copy from three directions
        req = DeletionRequest(removed)
        w_opt, _ = opt_linear(ds, ec, hp, req)
        keep = np.setdiff1d(np.arange(n), removed)
        X = np.asarray(ds.features)
        w_exact = gd_naive(X[keep].T @ X[keep], X[keep].T @ ds.labels[keep],
                           len(keep), 0.05, 0.1, 200)
        np.testing.assert_allclose(w_opt.w, w_exact, atol=1e-8)

    def test_deviation_scales_with_removed_gram_norm(self):
        # low-leverage removable block: the regime where the eigenvalue-only
        # update's error is proportional to the removed Gram perturbation
        rng0 = np.random.default_rng(4)
        n, m = 100, 5
        X = rng0.normal(size=(n, m))
        X[80:] *= 0.001
        y = X @ rng0.normal(size=m) + 0.1 * rng0.normal(size=n)
        ds = TrainingDataset(X, y, np.arange(n), LINEAR)
        hp = Hyperparams(0.03, 0.1, n, 120, 0, LINEAR)
        ec = build_eigen_cache_linear(ds)
        rng = np.random.default_rng(9)
        xs, devs = [], []
        for _ in range(20):
            k = int(rng.integers(1, 4))
            rows = 80 + rng.choice(20, size=k, replace=False)
            w_opt, _ = opt_linear(ds, ec, hp, DeletionRequest(rows))
            keep = np.setdiff1d(np.arange(n), rows)
            w_exact = gd_naive(X[keep].T @ X[keep], X[keep].T @ y[keep],
                               len(keep), 0.03, 0.1, 120)
            xs.append(np.linalg.norm(X[rows].T @ X[rows], 2))
            devs.append(np.linalg.norm(w_opt.w - w_exact))
        A = np.stack([xs, np.ones(len(xs))], axis=1)
        (slope, intercept), *_ = np.linalg.lstsq(A, np.array(devs), rcond=None)
        assert abs(intercept) <= 1e-6

    def test_feature_guard(self):
        ds = make_linear(n=10, m=5)
        ec = build_eigen_cache_linear(ds)
        hp = Hyperparams(0.01, 0.1, 10, 5, 0, LINEAR)
        import delprop.opt as opt_mod
        old = opt_mod.OPT_FEATURE_GUARD
        opt_mod.OPT_FEATURE_GUARD = 3
        try:
            with pytest.raises(ConfigError):
                opt_linear(ds, ec, hp, DeletionRequest([]))
        finally:
            opt_mod.OPT_FEATURE_GUARD = old


class TestOptLogistic:
    def build(self, n=240, m=5, tau=100, B=30, t_s=None, seed=1):
        ds = make_binary(n=n, m=m, seed=seed)
        hp = Hyperparams(None, 0.05, B, tau, 2, BINARY_LOGISTIC)
        sched = build_schedule(n, hp)
        run = train(ds, hp, sched)
        coeffs = extract_coeffs(ds, run, InterpolationTable())
        cache = capture(ds, run, coeffs=coeffs, t_s=t_s)
        return ds, run, sched, cache

    def test_ts_equal_tau_is_identity(self):
        ds, run, sched, cache = self.build(t_s=100)
        rng = np.random.default_rng(3)
        req = DeletionRequest(rng.choice(ds.n, size=20, replace=False))
        w_opt, _ = opt_logistic(ds, cache, None, req)
        cache_plain = capture(ds, run, coeffs=cache.coeffs)
        w_priu, _ = priu_logistic(ds, cache_plain, req)
        np.testing.assert_array_equal(w_opt.w, w_priu.w)

    def test_missing_ts_rejected(self):
        ds, run, sched, cache = self.build(t_s=None)
        with pytest.raises(ConfigError):
            opt_logistic(ds, cache, None, DeletionRequest([]))

    def test_deviation_grows_as_ts_shrinks(self):
        # converged regime (small fixed eta) so the frozen-phase length
        # dominates the deviation
        tau = 300
        ds = make_binary(n=240, m=5, seed=5)
        hp = Hyperparams(0.02, 0.05, 40, tau, 2, BINARY_LOGISTIC)
        sched = build_schedule(240, hp)
        run = train(ds, hp, sched)
        coeffs = extract_coeffs(ds, run, InterpolationTable())
        plain = capture(ds, run, coeffs=coeffs)
        rng = np.random.default_rng(4)
        req = DeletionRequest(rng.choice(ds.n, size=12, replace=False))
        w_ref, _ = priu_logistic(ds, plain, req)
        devs = []
        for frac in (0.9, 0.8, 0.7):
            cache = capture(ds, run, coeffs=coeffs, t_s=int(frac * tau))
            w_opt, _ = opt_logistic(ds, cache, None, req)
            devs.append(l2_dist(w_opt.w, w_ref.w))
        assert devs[0] <= devs[1] + 1e-12
        assert devs[1] <= devs[2] + 1e-12

    def test_accuracy_parity_with_retraining_at_default_ts(self):
        # converged desk run, freeze at 0.7*tau: validation accuracy stays
        # within half a point of the exact retrain
        rng = np.random.default_rng(3)
        n, m, tau = 2000, 6, 400
        X = rng.normal(size=(n, m))
        w_true = rng.normal(size=m)
        y = np.where(X @ w_true + 0.3 * rng.normal(size=n) > 0, 1.0, -1.0)
        Xv = rng.normal(size=(400, m))
        yv = np.where(Xv @ w_true + 0.3 * rng.normal(size=400) > 0, 1.0, -1.0)
        ds = TrainingDataset(X, y, np.arange(n), BINARY_LOGISTIC)
        val = TrainingDataset(Xv, yv, np.arange(400), BINARY_LOGISTIC)
        hp = Hyperparams(0.05, 0.01, 100, tau, 4, BINARY_LOGISTIC)
        sched = build_schedule(n, hp)
        run = train(ds, hp, sched)
        coeffs = extract_coeffs(ds, run, InterpolationTable())
        cache = capture(ds, run, coeffs=coeffs, t_s=int(0.7 * tau))
        req = DeletionRequest(rng.choice(n, size=100, replace=False))
        w_opt, _ = opt_logistic(ds, cache, None, req)
        w_ru, _ = retrain(ds, run.hp, sched, req)
        acc_o = validation_accuracy(val, w_opt.w)
        acc_b = validation_accuracy(val, w_ru.w)
        assert abs(acc_o - acc_b) <= 0.005

    def test_reuses_prebuilt_eigencache(self):
        ds, run, sched, cache = self.build(t_s=70)
        ec = build_eigen_cache_logistic(cache)
        req = DeletionRequest([1, 2, 3])
        a, _ = opt_logistic(ds, cache, ec, req)
        b, _ = opt_logistic(ds, cache, None, req)
        np.testing.assert_allclose(a.w, b.w, atol=1e-12)

    def test_multinomial_frozen_phase(self):
        from conftest import make_multinomial
        ds = make_multinomial(n=150, m=4, q=3, seed=2)
        hp = Hyperparams(None, 0.05, 30, 100, 2, ds.model_kind)
        sched = build_schedule(ds.n, hp)
        run = train(ds, hp, sched)
        coeffs = extract_coeffs(ds, run, InterpolationTable())
        req = DeletionRequest([4, 9, 20])
        plain = capture(ds, run, coeffs=coeffs)
        w_ref, _ = priu_logistic(ds, plain, req)
        # identity at t_s = tau, finite and close at the default 0.7*tau
        full = capture(ds, run, coeffs=coeffs, t_s=100)
        w_full, _ = opt_logistic(ds, full, None, req)
        np.testing.assert_array_equal(w_full.w, w_ref.w)
        frozen = capture(ds, run, coeffs=coeffs, t_s=70)
        w_frozen, _ = opt_logistic(ds, frozen, None, req)
        from delprop import cosine_sim
        assert cosine_sim(w_frozen.w, w_ref.w) > 0.98
