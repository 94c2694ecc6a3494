import numpy as np
import pytest

from selseg import (
    DaemConfig,
    Dataset,
    GridConfig,
    Segmentation,
    build_break_design,
    exhaustive_select,
    lasso_baseline,
    log_marginal_likelihood,
    ols,
    run_grid,
    top_candidate,
)
from selseg.model_select import (
    base_coef_std,
    count_active_segments,
    g_shrinkage,
    lasso_lambda_max,
    lasso_path_fit,
)
from selseg.simbench import dgp_spec, simulate

from helpers import quad_log_marginal

rng = np.random.default_rng


def two_regime_data(T=200, K=2, shift=(0.0, 1.5), tau=None, seed=0):
    r = rng(seed)
    tau = tau or T // 2
    X = np.column_stack([np.ones(T), r.normal(size=(T, K - 1))])
    y = X @ np.ones(K) + r.normal(size=T)
    y[tau:] += X[tau:] @ np.asarray(shift)
    return Dataset(y=y, X=X, names=tuple(f"x{i}" for i in range(K))), Segmentation((tau,))


class TestGShrinkage:
    def test_empty_set_alpha_one(self):
        g, alpha = g_shrinkage(100, 0, 1)
        assert alpha == 1.0
        assert g == pytest.approx(1.0 / 99.0)

    def test_active_segments_raise_alpha(self):
        g, alpha = g_shrinkage(100, 2, 3)
        assert alpha == pytest.approx(2.0)
        assert g == pytest.approx(1.0 / (100.0 ** 2 - 1.0))

    def test_count_active_segments(self):
        assert count_active_segments(frozenset()) == 1
        assert count_active_segments({(2, 1), (2, 3)}) == 2
        assert count_active_segments({(2, 1), (3, 1), (4, 2)}) == 4


class TestLogMarginalLikelihood:
    def test_quadrature_oracle_small_instance(self):
        r = rng(42)
        T = 12
        y = r.normal(size=T)
        y[6:] += 1.2
        d = Dataset(y=y, X=np.ones((T, 1)), names=("c",))
        seg = Segmentation((6,))
        active = frozenset({(2, 1)})
        closed = log_marginal_likelihood(d, seg, active)
        g, _ = g_shrinkage(T, 1, 2)
        quad, rel_err = quad_log_marginal(d, seg, active, g)
        assert rel_err < 1e-5
        assert closed == pytest.approx(quad, abs=1e-6)

    def test_empty_active_reduces_to_no_break_form(self):
        d, seg = two_regime_data(seed=1)
        got = log_marginal_likelihood(d, seg, frozenset())
        # direct no-break form with alpha = 1, g = 1/(T-1)
        from scipy.special import gammaln

        fit = ols(d.y, d.X)
        T, K = d.T, d.K
        half = 0.5 * (T - K)
        _, logdet = np.linalg.slogdet(d.X.T @ d.X)
        want = -half * np.log(np.pi) + gammaln(half) - 0.5 * logdet - half * np.log(fit.rss)
        assert got == pytest.approx(want, rel=1e-12)
        assert g_shrinkage(T, 0, 1)[0] == pytest.approx(1.0 / (T - 1))

    def test_bic_limit_shrinks_with_t(self):
        # tracked-constant BIC form: the gap collapses to the finite-sample
        # shrinkage correction and must fall as T grows
        from scipy.special import gammaln

        gaps = []
        for T in (200, 2000, 20000):
            r = rng(7)
            X = np.column_stack([np.ones(T), r.normal(size=T)])
            y = X @ np.array([0.5, 1.0]) + r.normal(size=T)
            y[T // 2:] += 1.0 * X[T // 2:, 1]
            d = Dataset(y=y, X=X, names=("c", "x"))
            seg = Segmentation((T // 2,))
            active = frozenset({(2, 2)})
            log_ml = log_marginal_likelihood(d, seg, active)
            from selseg import rss_partitioned

            _, s_full = rss_partitioned(d, seg, active)
            k, m_act = 1, 2
            _, alpha = g_shrinkage(T, k, m_act)
            half = 0.5 * (T - d.K)
            _, logdet = np.linalg.slogdet(d.X.T @ d.X)
            const = -half * np.log(np.pi) + gammaln(half) - 0.5 * logdet
            bic_form = -half * np.log(s_full) - 0.5 * alpha * k * np.log(T) + const
            gaps.append(abs(log_ml - bic_form))
        assert gaps[0] > gaps[1] > gaps[2]

    def test_scale_coherence(self):
        d, seg = two_regime_data(seed=3)
        sets = [frozenset(), {(2, 1)}, {(2, 2)}, {(2, 1), (2, 2)}]
        base = [log_marginal_likelihood(d, seg, a) for a in sets]
        c = 3.7
        d2 = Dataset(y=c * d.y, X=d.X, names=d.names)
        scaled = [log_marginal_likelihood(d2, seg, a) for a in sets]
        shifts = np.asarray(scaled) - np.asarray(base)
        assert np.allclose(shifts, shifts[0], atol=1e-8)
        p1 = np.exp(base - np.max(base));  p1 /= p1.sum()
        p2 = np.exp(scaled - np.max(scaled)); p2 /= p2.sum()
        assert np.allclose(p1, p2, atol=1e-10)
        assert np.argmax(base) == np.argmax(scaled)


class TestRunGrid:
    def test_probabilities_sum_to_one(self):
        d, seg = two_regime_data(seed=4)
        cands = run_grid(d, seg, GridConfig(n_lambda=8), DaemConfig(seed=0))
        assert sum(c.post_prob for c in cands) == pytest.approx(1.0, abs=1e-12)

    def test_null_data_collapses_to_single_candidate(self):
        r = rng(5)
        d = Dataset(y=r.normal(size=150), X=np.ones((150, 1)), names=("c",))
        seg = Segmentation((75,))
        cands = run_grid(d, seg, GridConfig(n_lambda=10), DaemConfig(seed=0))
        empties = [c for c in cands if c.active == frozenset()]
        assert empties and empties[0].post_prob > 0.99

    def test_grid_spacing_excludes_zero_includes_max(self):
        lambdas = GridConfig(n_lambda=50).lambdas(1024)
        assert len(lambdas) == 50
        assert lambdas[0] == pytest.approx(2 * np.log(1024) / 50)
        assert lambdas[-1] == pytest.approx(2 * np.log(1024))

    def test_candidate_bookkeeping(self):
        d, seg = two_regime_data(T=300, shift=(0.0, 2.0), seed=6)
        cands = run_grid(d, seg, GridConfig(n_lambda=12), DaemConfig(seed=0))
        top = top_candidate(cands)
        assert top.active == {(2, 2)}
        assert top.k_active == 1
        assert top.m_active == 2
        assert top.g == pytest.approx(1.0 / (d.T ** 2 - 1.0))
        # distinct active sets only
        actives = [c.active for c in cands if not c.failed]
        assert len(actives) == len(set(actives))

    def test_determinism(self):
        d, seg = two_regime_data(seed=8)
        a = run_grid(d, seg, GridConfig(n_lambda=6), DaemConfig(seed=11))
        b = run_grid(d, seg, GridConfig(n_lambda=6), DaemConfig(seed=11))
        assert [(c.active, c.log_ml, c.post_prob) for c in a] == \
               [(c.active, c.log_ml, c.post_prob) for c in b]


class TestExhaustive:
    def test_enumeration_size(self):
        d, seg = two_regime_data(T=60, K=1, shift=(1.0,), seed=9)
        cands = exhaustive_select(d, seg)
        assert len(cands) == 2
        assert sum(c.post_prob for c in cands) == pytest.approx(1.0)

    def test_space_bound_enforced(self):
        d, _ = two_regime_data(T=80, K=2, seed=10)
        with pytest.raises(ValueError, match="exceeds"):
            exhaustive_select(d, Segmentation(tuple(range(10, 80, 10))))

    def test_grid_winner_in_exhaustive_top_set(self):
        d, seg = two_regime_data(T=200, K=2, shift=(0.0, 1.8), seed=12)
        grid_top = top_candidate(run_grid(d, seg, GridConfig(n_lambda=15), DaemConfig(seed=0)))
        ex = exhaustive_select(d, seg)
        ex_top3 = {c.active for c in ex[:3]}
        assert grid_top.active in ex_top3


class TestLassoBaseline:
    def test_zero_lambda_is_full_ols(self):
        d, seg = two_regime_data(T=120, seed=13)
        beta = lasso_path_fit(d, seg, 0.0)
        full = ols(d.y, build_break_design(d, seg).Xfull)
        assert np.allclose(beta, full.beta_hat)
        cands = lasso_baseline(d, seg, lambda_grid=[0.0])
        assert top_candidate(cands).active == {(2, 1), (2, 2)}

    def test_huge_lambda_empties(self):
        d, seg = two_regime_data(T=120, seed=14)
        lmax = lasso_lambda_max(d, seg)
        cands = lasso_baseline(d, seg, lambda_grid=[10.0 * lmax])
        assert top_candidate(cands).active == frozenset()

    def test_single_covariate_matches_soft_threshold_oracle(self):
        # K = 1, m = 2: profiling out the unpenalized base coefficient gives
        # an exact one-dimensional soft-threshold solution
        r = rng(15)
        T = 90
        x = r.normal(size=T)
        y = 1.0 * x + r.normal(size=T)
        y[T // 2:] += 0.8 * x[T // 2:]
        d = Dataset(y=y, X=x[:, None], names=("x",))
        seg = Segmentation((T // 2,))
        design = build_break_design(d, seg)
        x2 = design.Xfull[:, 1]
        M = np.eye(T) - np.outer(x, x) / float(x @ x)
        xt = M @ x2
        for lam in (0.5, 5.0, 50.0, 500.0):
            z = float(xt @ y)
            denom = float(xt @ xt)
            db_star = np.sign(z) * max(abs(z) - lam / 2.0, 0.0) / denom
            b1_star = float(x @ (y - x2 * db_star)) / float(x @ x)
            beta = lasso_path_fit(d, seg, lam)
            assert beta[1] == pytest.approx(db_star, abs=1e-8)
            assert beta[0] == pytest.approx(b1_star, abs=1e-8)

    def test_active_size_monotone_along_path(self):
        # one penalized coordinate (K=1, m=2) orthogonalizes exactly after
        # profiling the free base coefficient: |A| is non-increasing in lambda
        r = rng(16)
        T = 100
        x = r.normal(size=T)
        y = 0.5 * x + r.normal(size=T)
        y[T // 2:] += 0.6 * x[T // 2:]
        d = Dataset(y=y, X=x[:, None], names=("x",))
        seg = Segmentation((T // 2,))
        lmax = lasso_lambda_max(d, seg)
        sizes = [
            int(np.sum(lasso_path_fit(d, seg, lam)[1:] != 0.0))
            for lam in np.linspace(lmax / 30, 1.2 * lmax, 30)
        ]
        assert sizes[0] == 1 and sizes[-1] == 0
        assert all(a >= b for a, b in zip(sizes, sizes[1:]))

    def test_candidate_probabilities_sum_to_one(self):
        d, seg = two_regime_data(T=150, shift=(0.0, 1.2), seed=18)
        cands = lasso_baseline(d, seg, n_lambda=20)
        assert sum(c.post_prob for c in cands) == pytest.approx(1.0, abs=1e-12)


class TestBaseCoefStd:
    def test_matches_classic_formula(self):
        d, _ = two_regime_data(seed=17)
        std = base_coef_std(d)
        fit = ols(d.y, d.X)
        s2 = fit.rss / (d.T - d.K)
        want = np.sqrt(np.diag(s2 * np.linalg.inv(d.X.T @ d.X)))
        assert np.allclose(std, want)
