"""Marginal-likelihood scoring and model-space search over penalty settings.

Each (kappa, lambda) pair defines one candidate model through the active set
its penalized fit selects.  Candidates are scored by the closed-form log
marginal likelihood of the conditional-normal model (all data-independent
constants included, so values are true log densities usable as mixture
weights), deduplicated by active set, and given posterior probabilities
under a uniform model prior.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from itertools import combinations
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from .exceptions import InsufficientObservationsError, SingularDesignError
from .regress_core import (
    Dataset,
    Segmentation,
    active_columns,
    build_break_design,
    ols,
    rss_partitioned,
    validate_active,
)
from .selo import BreakGram, DaemConfig, SeloParams, daem_fit


def g_shrinkage(T: int, k_active: int, m_active: int) -> tuple:
    """(g, alpha) with g = 1/(T^alpha - 1); alpha = 1 for an empty active set
    and (k + m_active - 1)/k otherwise, so the penalty also counts the number
    of active segments."""
    if k_active == 0:
        alpha = 1.0
    else:
        alpha = (k_active + m_active - 1) / k_active
    return 1.0 / (T ** alpha - 1.0), alpha


def count_active_segments(active) -> int:
    """Regimes carrying at least one active entry, plus the base regime."""
    return len({j for (j, _) in active}) + 1 if active else 1


def log_marginal_likelihood(data: Dataset, seg: Segmentation, active: Iterable) -> float:
    """Closed-form log marginal likelihood of the model keeping the given
    first-difference entries free and pinning the rest to zero.

    ln f = -((T-K)/2) ln pi + ln Gamma((T-K)/2) - (1/2) ln|X1'X1|
           + (k/2) ln(g/(1+g)) - ((T-K)/2) ln[(g/(1+g)) s_base + (1/(1+g)) s_full]
    with g/(1+g) = T^-alpha exactly.
    """
    act = validate_active(active, seg.m, data.K)
    T, K = data.T, data.K
    if T - K <= 0:
        raise InsufficientObservationsError("need T > K")
    s_base, s_full = rss_partitioned(data, seg, act)
    k = len(act)
    _, alpha = g_shrinkage(T, k, count_active_segments(act))
    w = T ** (-alpha)  # = g/(1+g)
    d = w * s_base + (1.0 - w) * s_full
    sign, logdet = np.linalg.slogdet(data.X.T @ data.X)
    if sign <= 0:
        raise SingularDesignError("X'X is not positive definite")
    half = 0.5 * (T - K)
    return float(
        -half * np.log(np.pi) + gammaln(half) - 0.5 * logdet
        - 0.5 * k * alpha * np.log(T) - half * np.log(d)
    )


@dataclass(frozen=True)
class ModelCandidate:
    """One (kappa, lambda) model: its selected active set and its score."""

    kappa: float
    lam: float
    a: np.ndarray
    active: frozenset
    k_active: int
    m_active: int
    g: float
    log_ml: float
    post_prob: float = 0.0
    failed: bool = False


@dataclass(frozen=True)
class GridConfig:
    """Penalty grid: n_lambda values uniform on (0, lambda_max], lambda_max
    defaulting to 2 ln T, crossed with the a-scale multipliers."""

    n_lambda: int = 50
    lambda_max: Optional[float] = None
    kappas: tuple = (0.1, 1.0)

    def lambdas(self, T: int) -> np.ndarray:
        lmax = self.lambda_max if self.lambda_max is not None else 2.0 * np.log(T)
        n = self.n_lambda
        return np.arange(1, n + 1) * (lmax / n)


def base_coef_std(data: Dataset) -> np.ndarray:
    """OLS standard errors of the no-break regression: sqrt of the diagonal
    of sigma2 (X'X)^-1 with sigma2 = RSS/(T-K)."""
    fit = ols(data.y, data.X)
    sigma2 = fit.rss / max(fit.dof, 1)
    XtX_inv = np.linalg.inv(data.X.T @ data.X)
    std = np.sqrt(np.maximum(sigma2 * np.diag(XtX_inv), 0.0))
    # a perfect fit would give a zero bias interval; keep it positive
    return np.maximum(std, 1e-12)


def _normalize(cands: list) -> list:
    ok = [c for c in cands if not c.failed]
    if ok:
        logs = np.array([c.log_ml for c in ok])
        probs = np.exp(logs - logsumexp(logs))
        probs /= probs.sum()
        by_active = {c.active: p for c, p in zip(ok, probs)}
    else:
        by_active = {}
    out = [replace(c, post_prob=float(by_active.get(c.active, 0.0)) if not c.failed else 0.0)
           for c in cands]
    out.sort(key=lambda c: (-c.post_prob, c.failed))
    return out


def _candidate_for(data, seg, active, kappa, lam, a, failed=False):
    k = len(active)
    m_act = count_active_segments(active)
    g, _ = g_shrinkage(data.T, k, m_act)
    log_ml = -np.inf
    if not failed:
        log_ml = log_marginal_likelihood(data, seg, active)
    return ModelCandidate(
        kappa=kappa, lam=lam, a=np.asarray(a, dtype=float), active=frozenset(active),
        k_active=k, m_active=m_act, g=g, log_ml=log_ml, failed=failed,
    )


def run_grid(data: Dataset, seg: Segmentation, cfg: Optional[GridConfig] = None,
             daem_cfg: Optional[DaemConfig] = None) -> list:
    """Fit the penalized model over the (kappa, lambda) grid and score the
    distinct active sets it uncovers.

    Identical active sets reached from different grid points collapse to a
    single candidate before normalizing, so posterior probabilities are not
    multiplicity weighted.  Fits that error out are kept as flagged
    candidates with zero probability.
    """
    cfg = cfg or GridConfig()
    daem_cfg = daem_cfg or DaemConfig()
    stds = base_coef_std(data)
    lambdas = cfg.lambdas(data.T)
    gram = BreakGram(data, seg) if seg.m > 1 else None

    seen = {}
    order = []
    z = 0
    for kappa in cfg.kappas:
        a = kappa * stds
        for lam in lambdas:
            per_fit = replace(daem_cfg, seed=(_seed_int(daem_cfg.seed), z))
            z += 1
            try:
                fit = daem_fit(data, seg, SeloParams(lam=float(lam), a=a), per_fit, gram=gram)
                cand = _candidate_for(data, seg, fit.active, kappa, float(lam), a)
            except (SingularDesignError, InsufficientObservationsError) as exc:
                warnings.warn(f"grid fit (kappa={kappa}, lambda={lam:.4g}) failed: {exc}")
                cand = _candidate_for(data, seg, frozenset(), kappa, float(lam), a, failed=True)
            key = ("failed", z) if cand.failed else cand.active
            if key not in seen:
                seen[key] = cand
                order.append(key)
    return _normalize([seen[k] for k in order])


def _seed_int(seed) -> int:
    if isinstance(seed, (tuple, list)):
        return int(np.random.SeedSequence(list(seed)).generate_state(1)[0])
    return int(seed)


def exhaustive_select(data: Dataset, seg: Segmentation, max_dim: int = 10) -> list:
    """Score every one of the 2^{(m-1)K} active sets; refuses when the space
    exceeds 2^max_dim."""
    n_pos = (seg.m - 1) * data.K
    if n_pos > max_dim:
        raise ValueError(
            f"(m-1)K = {n_pos} exceeds the exhaustive-search bound {max_dim}"
        )
    positions = [(j, k) for j in range(2, seg.m + 1) for k in range(1, data.K + 1)]
    cands = []
    for size in range(n_pos + 1):
        for subset in combinations(positions, size):
            cands.append(_candidate_for(data, seg, frozenset(subset), np.nan, np.nan,
                                        np.full(data.K, np.nan)))
    return _normalize(cands)


def lasso_lambda_max(data: Dataset, seg: Segmentation) -> float:
    """Smallest penalty that zeroes every first-difference coefficient:
    2 max |x_c' r| with r the base-fit residual."""
    if seg.m == 1:
        return 1.0
    design = build_break_design(data, seg)
    base = ols(data.y, data.X)
    r = data.y - data.X @ base.beta_hat
    return float(2.0 * np.max(np.abs(design.Xfull[:, data.K :].T @ r)))


def lasso_path_fit(data: Dataset, seg: Segmentation, lam: float,
                   beta0: Optional[np.ndarray] = None,
                   tol: float = 1e-10, max_sweeps: int = 2000) -> np.ndarray:
    """Cyclic coordinate descent for ||y - X_tau b||^2 + lam * sum |db|,
    with the base block unpenalized.  lam = 0 returns the plain OLS fit."""
    design = build_break_design(data, seg)
    Xf = design.Xfull
    p = Xf.shape[1]
    if lam == 0.0:
        return ols(data.y, Xf).beta_hat
    norms = np.einsum("tp,tp->p", Xf, Xf)
    beta = np.zeros(p) if beta0 is None else beta0.copy()
    resid = data.y - Xf @ beta
    scale = float(np.max(norms)) or 1.0
    for _ in range(max_sweeps):
        delta = 0.0
        for c in range(p):
            if norms[c] <= 0:
                continue
            z = float(Xf[:, c] @ resid) + norms[c] * beta[c]
            if c < data.K:
                new = z / norms[c]
            else:
                new = np.sign(z) * max(abs(z) - lam / 2.0, 0.0) / norms[c]
            if new != beta[c]:
                resid += Xf[:, c] * (beta[c] - new)
                delta = max(delta, abs(new - beta[c]) * np.sqrt(norms[c]))
                beta[c] = new
        if delta <= tol * np.sqrt(scale):
            break
    return beta


def lasso_baseline(data: Dataset, seg: Segmentation,
                   lambda_grid: Optional[Sequence] = None,
                   n_lambda: int = 50) -> list:
    """L1 replacement of the selective penalty: solve the Lasso path over the
    grid, read off the nonzero first-difference entries of each solution, and
    score those active sets with the same marginal likelihood."""
    if lambda_grid is None:
        lmax = lasso_lambda_max(data, seg)
        lambda_grid = np.arange(1, n_lambda + 1) * (lmax / n_lambda)
    seen = {}
    order = []
    beta = None
    for lam in sorted(lambda_grid, reverse=True):  # warm starts along the path
        beta = lasso_path_fit(data, seg, float(lam), beta0=beta)
        dbeta = beta[data.K :].reshape(seg.m - 1, data.K) if seg.m > 1 else np.empty((0, data.K))
        active = frozenset(
            (j + 2, k + 1)
            for j in range(seg.m - 1)
            for k in range(data.K)
            if dbeta[j, k] != 0.0
        )
        if active not in seen:
            try:
                cand = _candidate_for(data, seg, active, np.nan, float(lam), np.full(data.K, np.nan))
            except (SingularDesignError, InsufficientObservationsError):
                continue
            seen[active] = cand
            order.append(active)
    return _normalize([seen[k] for k in order])


def top_candidate(cands: Sequence) -> ModelCandidate:
    ok = [c for c in cands if not c.failed]
    if not ok:
        raise ValueError("no successful candidates")
    return max(ok, key=lambda c: c.post_prob)
