import numpy as np
import pytest

from selseg import (
    DaemConfig,
    Dataset,
    Segmentation,
    SeloParams,
    calibrate_mixture,
    daem_e_step,
    daem_fit,
    init_search,
    ols,
    penalized_objective,
    selo_penalty,
    swap,
)
from selseg.selo import (
    LN2,
    default_n_init,
    mixture_logpdf,
    zeta_for,
)

from helpers import simulate_single_shift

# frozen from an extended-precision evaluation of (2^0.99 - 2)/(1 - 2^0.99)
ZETA_099 = 0.014008537195089

rng = np.random.default_rng


def break_data(T=120, K=2, shift=2.0, tau=60, seed=0):
    r = rng(seed)
    X = np.column_stack([np.ones(T), r.normal(size=(T, K - 1))])
    beta = np.zeros(K)
    y = X @ beta + r.normal(size=T)
    y[tau:] += shift * X[tau:, 1] if K > 1 else shift
    return Dataset(y=y, X=X, names=tuple(f"x{i}" for i in range(K))), Segmentation((tau,))


class TestSeloPenalty:
    def test_zero_argument(self):
        assert selo_penalty(0.0, 1.0, 2.0, ZETA_099) == 0.0

    def test_value_at_a_is_lambda_y(self):
        # pen(a | a, lam) = lam * y0 exactly, by construction of zeta
        for y0 in (0.5, 0.9, 0.99):
            z = zeta_for(y0)
            assert selo_penalty(3.0, 3.0, 1.7, z) == pytest.approx(1.7 * y0, rel=1e-12)

    def test_zeta_value(self):
        assert zeta_for(0.99) == pytest.approx(ZETA_099, rel=1e-10)
        assert SeloParams(lam=1.0, a=np.ones(1)).zeta == pytest.approx(ZETA_099, rel=1e-10)

    def test_symmetry_and_bounds(self):
        z = zeta_for(0.99)
        w = np.linspace(-50, 50, 1001)
        pen = selo_penalty(w, 0.5, 2.0, z)
        assert np.allclose(pen, pen[::-1])
        assert np.all(pen >= 0.0)
        assert np.all(pen < 2.0)

    def test_limit_at_infinity(self):
        z = zeta_for(0.99)
        for a in (0.01, 1.0):
            assert selo_penalty(1e6 * a, a, 1.0, z) == pytest.approx(1.0, abs=1e-6)

    def test_derivative_at_a_below_lambda(self):
        # d pen / dw at |w| = a stays below lam once a >= 0.0099
        z = zeta_for(0.99)
        lam = 2.3
        for a in (0.0099, 0.05, 1.0, 10.0):
            eps = 1e-7 * a
            deriv = (selo_penalty(a + eps, a, lam, z) - selo_penalty(a - eps, a, lam, z)) / (2 * eps)
            assert 0.0 < deriv <= lam


class TestCalibrateMixture:
    def test_variance_ratio_exact(self):
        mix = calibrate_mixture(np.array([0.1, 2.0]), 1.3)
        assert np.all(mix.r1 / mix.r0 == 10000.0)
        assert mix.c == 10000.0

    def test_closed_forms(self):
        lam, a = 1.0, 0.1
        mix = calibrate_mixture(np.array([a]), lam)
        em1 = np.expm1(lam)
        assert mix.omega[0] == pytest.approx(em1 / (100.0 + em1), rel=1e-12)
        assert mix.r0[0] == pytest.approx(
            a ** 2 / 8.0 * (1 - 1e-4) / abs(np.log(em1)), rel=1e-12
        )

    def test_intersection_at_half_a(self):
        # spike and slab weighted densities cross at |w| = a/2 (lam > ln 2)
        for lam in (1.0, 5.0, 10.0):
            for a in (0.01, 0.1):
                mix = calibrate_mixture(np.array([a]), lam)
                w = a / 2.0
                spike = mix.omega[0] * np.exp(-0.5 * w ** 2 / mix.r0[0]) / np.sqrt(2 * np.pi * mix.r0[0])
                slab = (1 - mix.omega[0]) * np.exp(-0.5 * w ** 2 / mix.r1[0]) / np.sqrt(2 * np.pi * mix.r1[0])
                assert spike == pytest.approx(slab, rel=1e-8)

    def test_penalty_gap_values(self):
        # exact gap = lam + a^2/(2 r1) - ln(1 + (e^lam - 1)^-3); the lam = 1
        # case sits 18% below lam (see the acceptance suite for the stated
        # 10% criterion and its expected failure there)
        for lam, a, want in [
            (1.0, 0.1, 0.820303),
            (5.0, 0.1, 5.001997),
            (10.0, 0.1, 10.004000),
        ]:
            mix = calibrate_mixture(np.array([a]), lam)
            gap = float(
                mixture_logpdf(0.0, mix.omega[0], mix.r0[0], mix.r1[0])
                - mixture_logpdf(a, mix.omega[0], mix.r0[0], mix.r1[0])
            )
            exact = lam + a ** 2 / (2 * mix.r1[0]) - np.log1p(np.expm1(lam) ** -3)
            assert gap == pytest.approx(exact, rel=1e-9)
            assert gap == pytest.approx(want, abs=1e-5)

    def test_ln2_singularity_perturbed(self):
        with pytest.warns(UserWarning, match="ln\\(2\\)"):
            mix = calibrate_mixture(np.array([0.5]), float(LN2))
        assert np.all(np.isfinite(mix.r0)) and np.all(mix.r0 > 0)

    def test_large_lambda_does_not_overflow(self):
        mix = calibrate_mixture(np.array([0.5]), 1e4)
        assert mix.omega[0] == 1.0  # spike weight saturates
        assert np.isfinite(mix.r0[0]) and mix.r0[0] > 0


class TestPenalizedObjective:
    def test_zero_differences_reduce_to_rss(self):
        d, seg = break_data(seed=1)
        sp = SeloParams(lam=2.0, a=np.ones(d.K))
        beta = np.concatenate([ols(d.y, d.X).beta_hat, np.zeros(d.K)])
        resid = d.y - d.X @ beta[: d.K]
        assert penalized_objective(beta, d, seg, sp) == pytest.approx(float(resid @ resid))

    def test_penalty_additivity(self):
        d, seg = break_data(seed=2)
        sp = SeloParams(lam=2.0, a=np.ones(d.K))
        beta0 = np.concatenate([ols(d.y, d.X).beta_hat, np.zeros(d.K)])
        beta1 = beta0.copy()
        beta1[d.K] = 0.7  # activate one difference coefficient
        resid0 = d.y - d.X @ beta0[: d.K]
        design_col = np.concatenate([np.zeros(seg.tau[0]), np.ones(d.T - seg.tau[0])])
        resid1 = resid0 - 0.7 * design_col * d.X[:, 0]
        pen = selo_penalty(0.7, 1.0, 2.0, sp.zeta)
        want = float(resid1 @ resid1) + d.T * pen
        assert penalized_objective(beta1, d, seg, sp) == pytest.approx(want, rel=1e-12)

    def test_matches_formula_oracle(self):
        r = rng(3)
        d = Dataset(y=r.normal(size=20), X=np.column_stack([np.ones(20), r.normal(size=20)]),
                    names=("c", "x"))
        seg = Segmentation((8, 14))
        sp = SeloParams(lam=1.2, a=np.array([0.3, 0.7]))
        beta = r.normal(size=6)
        got = penalized_objective(beta, d, seg, sp)
        # independent re-evaluation, element by element
        b = seg.boundaries(20)
        fitted = np.zeros(20)
        for t in range(1, 21):
            x = d.X[t - 1]
            coef = beta[:2].copy()
            for j in (2, 3):
                if t > b[j - 1]:
                    coef += beta[2 * (j - 1) : 2 * j]
            fitted[t - 1] = x @ coef
        rss = float(np.sum((d.y - fitted) ** 2))
        pen = 0.0
        for j in (2, 3):
            for k in (1, 2):
                w = abs(beta[2 * (j - 1) + k - 1])
                u = w / sp.a[k - 1]
                pen += (1.2 / np.log(2)) * np.log((2 * u + sp.zeta) / (u + sp.zeta))
        assert got == pytest.approx(rss + 20 * pen, rel=1e-12)


class TestEStep:
    def test_spike_dominates_at_zero(self):
        mix = calibrate_mixture(np.ones(2), 2.0)  # lam > ln 2
        beta = np.zeros(4)  # m = 2, K = 2
        p = daem_e_step(beta, mix, 1.0)
        assert p.shape == (2, 2)
        assert np.all(p[:, 0] > p[:, 1])

    def test_phi_one_is_standard_em(self):
        mix = calibrate_mixture(np.array([0.5]), 1.5)
        beta = np.array([0.3, 0.2])  # K = 1, one difference coord
        p = daem_e_step(beta, mix, 1.0)
        l0 = mix.omega[0] * np.exp(-0.5 * 0.2 ** 2 / mix.r0[0]) / np.sqrt(2 * np.pi * mix.r0[0])
        l1 = (1 - mix.omega[0]) * np.exp(-0.5 * 0.2 ** 2 / mix.r1[0]) / np.sqrt(2 * np.pi * mix.r1[0])
        assert p[0, 0] == pytest.approx(l0 / (l0 + l1), rel=1e-10)

    def test_normalization_exact(self):
        mix = calibrate_mixture(np.ones(3), 0.9)
        beta = rng(4).normal(size=9)
        for phi in (0.01, 0.25, 1.0):
            p = daem_e_step(beta, mix, phi)
            assert np.allclose(p.sum(axis=1), 1.0)

    def test_phi_out_of_range(self):
        mix = calibrate_mixture(np.ones(1), 1.0)
        with pytest.raises(ValueError):
            daem_e_step(np.zeros(2), mix, 0.0)


class TestSwap:
    def test_incumbent_kept_when_no_improvement(self):
        # strong break: the singleton true set beats all single toggles
        d, seg = break_data(T=200, shift=3.0, tau=100, seed=5)
        sp = SeloParams(lam=1.0, a=0.05 * np.ones(2))
        f_true, beta_true = swap({(2, 2)}, d, seg, sp)
        # from the true set, toggling anything must not improve
        f_again, beta_again = swap({(2, 2)}, d, seg, sp)
        assert f_again == f_true
        assert np.array_equal(beta_true, beta_again)

    def test_adding_true_break_improves_from_empty(self):
        d, seg = break_data(T=200, shift=3.0, tau=100, seed=6)
        sp = SeloParams(lam=1.0, a=0.05 * np.ones(2))
        base = ols(d.y, d.X)
        f_empty_incumbent = base.rss  # empty set objective = base RSS
        f, beta = swap(frozenset(), d, seg, sp)
        assert f < f_empty_incumbent
        assert np.any(beta[d.K:] != 0.0)

    def test_tie_broken_to_smallest_pair(self):
        # two identical covariates: toggling (2,1) and (2,2) tie exactly
        r = rng(7)
        x = r.normal(size=80)
        d = Dataset(y=r.normal(size=80) + np.where(np.arange(80) >= 40, 2 * x, 0.0),
                    X=np.column_stack([x, x + 0.0]), names=("a", "b"))
        seg = Segmentation((40,))
        sp = SeloParams(lam=0.5, a=np.ones(2))
        f, beta = swap(frozenset(), d, seg, sp)
        assert beta[2] != 0.0 and beta[3] == 0.0  # (2,1) chosen, not (2,2)


class TestInitSearch:
    def test_default_budget(self):
        assert default_n_init(2, 3) == 4  # 2^{(m-1)K - 1}
        assert default_n_init(2, 1) == 1
        assert default_n_init(3, 50) == 3000

    def test_single_candidate_matches_swap_of_draw(self):
        d, seg = break_data(seed=8)
        sp = SeloParams(lam=1.0, a=0.1 * np.ones(2))
        cfg = DaemConfig(n_init=1, seed=42)
        beta = init_search(d, seg, sp, cfg)
        # replay the single draw with the same generator
        r = np.random.default_rng(42)
        p = r.uniform()
        mask = r.random(2) < p
        act = frozenset(pos for pos, keep in zip([(2, 1), (2, 2)], mask) if keep)
        f_ref, beta_ref = swap(act, d, seg, sp)
        assert np.allclose(beta, beta_ref)

    def test_argmin_contract(self):
        d, seg = break_data(seed=9)
        sp = SeloParams(lam=1.0, a=0.1 * np.ones(2))
        cfg = DaemConfig(n_init=8, seed=3)
        beta = init_search(d, seg, sp, cfg)
        f_star = penalized_objective(beta, d, seg, sp)
        r = np.random.default_rng(3)
        for _ in range(8):
            p = r.uniform()
            mask = r.random(2) < p
            act = frozenset(pos for pos, keep in zip([(2, 1), (2, 2)], mask) if keep)
            f_cand, _ = swap(act, d, seg, sp)
            assert f_star <= f_cand + 1e-9


class TestDaemFit:
    def test_single_regime_is_plain_ols(self):
        d, _ = break_data(seed=10)
        fit = daem_fit(d, Segmentation(()), SeloParams(lam=1.0, a=np.ones(2)),
                       DaemConfig(seed=0))
        ref = ols(d.y, d.X)
        assert fit.active == frozenset()
        assert np.allclose(fit.beta, ref.beta_hat)
        assert fit.objective == pytest.approx(ref.rss)

    def test_vanishing_penalty_recovers_full_ols(self):
        d, seg = break_data(T=150, shift=1.5, tau=75, seed=11)
        sp = SeloParams(lam=1e-8, a=3.0 * np.ones(2))
        fit = daem_fit(d, seg, sp, DaemConfig(seed=1))
        from selseg import build_break_design

        full = ols(d.y, build_break_design(d, seg).Xfull)
        assert fit.active == {(2, 1), (2, 2)}
        assert np.allclose(fit.beta, full.beta_hat, atol=1e-6)

    def test_huge_penalty_empties_active_set(self):
        d, seg = break_data(T=150, shift=1.5, tau=75, seed=12)
        sp = SeloParams(lam=1e4, a=0.05 * np.ones(2))
        fit = daem_fit(d, seg, sp, DaemConfig(seed=1))
        assert fit.active == frozenset()
        assert np.allclose(fit.beta[d.K:], 0.0)

    def test_seed_determinism_bit_identical(self):
        d, seg = break_data(seed=13)
        sp = SeloParams(lam=0.9, a=0.1 * np.ones(2))
        f1 = daem_fit(d, seg, sp, DaemConfig(seed=99))
        f2 = daem_fit(d, seg, sp, DaemConfig(seed=99))
        assert np.array_equal(f1.beta, f2.beta)
        assert f1.sigma2 == f2.sigma2
        assert f1.active == f2.active
        assert f1.trace == f2.trace

    def test_reported_beta_consistent_with_active(self):
        d, seg = break_data(T=180, shift=2.0, tau=90, seed=14)
        sp = SeloParams(lam=1.2, a=0.1 * np.ones(2))
        fit = daem_fit(d, seg, sp, DaemConfig(seed=2))
        dbeta = fit.beta[d.K:].reshape(seg.m - 1, d.K)
        for j in range(seg.m - 1):
            for k in range(d.K):
                if (j + 2, k + 1) in fit.active:
                    assert dbeta[j, k] != 0.0
                else:
                    assert dbeta[j, k] == 0.0

    def test_stage_trace_monotone(self):
        d, seg = break_data(T=150, shift=1.0, tau=75, seed=15)
        sp = SeloParams(lam=1.5, a=0.2 * np.ones(2))
        fit = daem_fit(d, seg, sp, DaemConfig(seed=5))
        assert len(fit.trace) == 10
        for stage in fit.trace:
            diffs = np.diff(np.asarray(stage))
            assert np.all(diffs >= -1e-10)

    def test_null_series_mostly_empty(self):
        # no true differences: the selected set should usually be empty
        hits = 0
        for s in range(20):
            r = rng(1000 + s)
            X = np.column_stack([np.ones(256), r.normal(size=256)])
            d = Dataset(y=r.normal(size=256), X=X, names=("c", "x"))
            sp = SeloParams(lam=2.0, a=0.1 * np.ones(2))
            fit = daem_fit(d, Segmentation((128,)), sp, DaemConfig(seed=s))
            hits += fit.active == frozenset()
        assert hits >= 18

    def test_single_strong_break_identified(self):
        # one large coefficient switch at T = 1024: the right entry is active
        # and the others are excluded in at least 95 of 100 seeded runs
        hits = 0
        for s in range(100):
            d = simulate_single_shift(1024, None, 400, seed=s, ar=(0.4, -0.6))
            seg = Segmentation((400,))
            std = np.sqrt(np.diag(np.linalg.inv(d.X.T @ d.X))
                          * ols(d.y, d.X).rss / (d.T - d.K))
            sp = SeloParams(lam=2.0, a=np.maximum(std, 1e-12))
            fit = daem_fit(d, seg, sp, DaemConfig(seed=s))
            hits += fit.active == {(2, 2)}
        assert hits >= 95
