"""Posterior sampling of break dates for a selected model.

Chains propose joint integer moves built from scaled differences of other
chains' states (a differential-evolution Metropolis scheme); a proposal is
accepted on the marginal-likelihood ratio of the model re-anchored to the
moved dates, with the active-set structure held fixed.  Convergence is
monitored with the multivariate potential scale reduction factor.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .exceptions import InvalidSegmentationError, SingularDesignError
from .model_select import log_marginal_likelihood
from .regress_core import Dataset, Segmentation


@dataclass(frozen=True)
class DreamConfig:
    """Sampler sizes and the proposal scaling gamma(delta, m) = 2.38/sqrt(2 delta m).

    walk_prob mixes in a symmetric +/-1 random-walk move: difference-based
    proposals alone are absorbing once every chain reaches the same integer
    state (the differences, and the rounded jitter, are then exactly zero),
    which collapses sharp posteriors to a point.  The mixture keeps the chain
    irreducible on the integer support and leaves the Metropolis rule exact.
    """

    n_iter: int = 4000
    n_chains: Optional[int] = None      # default 2m
    burn_in: Optional[int] = None       # default n_iter // 2
    delta_max: int = 3
    jitter_sd: float = 0.0001
    walk_prob: float = 0.1
    min_duration: Optional[int] = None  # default K + 1
    seed: int = 0

    def resolved(self, m: int, K: int) -> "DreamConfig":
        from dataclasses import replace

        n_chains = self.n_chains if self.n_chains is not None else 2 * m
        burn_in = self.burn_in if self.burn_in is not None else self.n_iter // 2
        min_dur = self.min_duration if self.min_duration is not None else K + 1
        if n_chains < 3:
            raise ValueError("need at least 3 chains for difference proposals")
        if burn_in >= self.n_iter:
            raise ValueError("burn_in must be smaller than n_iter")
        return replace(self, n_chains=n_chains, burn_in=burn_in, min_duration=min_dur)


def gamma_scale(delta: int, m: int) -> float:
    return 2.38 / np.sqrt(2.0 * delta * m)


def break_prior_support(J: Segmentation, T: int, gamma_dur: int) -> list:
    """Disjoint uniform-prior windows, one per break: break i may move inside
    [mid(tau_{i-1}, tau_i) + gamma, mid(tau_i, tau_{i+1}) - gamma].

    A window that would be empty shrinks its duration margin to the largest
    feasible value >= 1 with a warning.
    """
    b = J.boundaries(T)
    supports = []
    for i in range(1, len(b) - 1):
        lo_mid = (b[i - 1] + b[i]) // 2
        hi_mid = (b[i] + b[i + 1]) // 2
        gd = gamma_dur
        if lo_mid + gd > hi_mid - gd:
            gd = max((hi_mid - lo_mid) // 2, 1)
            warnings.warn(
                f"break {i}: prior window empty at duration {gamma_dur}; shrunk to {gd}"
            )
            if lo_mid + gd > hi_mid - gd:
                gd = 0  # adjacent midpoints; pin the break near its estimate
        supports.append((lo_mid + gd, max(hi_mid - gd, lo_mid + gd)))
    return supports


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def dream_propose(tau_j: np.ndarray, population: np.ndarray, j: int,
                  delta: int, m: int, rng, jitter_sd: float = 0.0001) -> np.ndarray:
    """Differenced proposal tau_j + round(gamma * (sum tau_r1 - sum tau_r2) + xi).

    The 2*delta donor indices are uniform over the other chains (drawn with
    replacement so small populations stay feasible); xi is a tiny symmetric
    jitter, so the proposal density is symmetric in (current, proposal).
    """
    R = population.shape[0]
    others = np.delete(np.arange(R), j)
    r1 = rng.choice(others, size=delta, replace=True)
    r2 = rng.choice(others, size=delta, replace=True)
    diff = population[r1].sum(axis=0) - population[r2].sum(axis=0)
    xi = rng.normal(0.0, jitter_sd, size=tau_j.shape[0])
    step = _round_half_away(gamma_scale(delta, m) * diff + xi)
    return tau_j + step.astype(int)


@dataclass
class BreakPosterior:
    """Kept draws (rows are iterations, columns breaks), acceptance rate,
    PSRF and per-break credible intervals."""

    draws: np.ndarray
    acceptance_rate: float
    psrf: float
    intervals_90: list
    intervals_95: list
    supports: list
    degenerate: bool = False


def psrf(chains: Sequence, with_flag: bool = False):
    """Multivariate potential scale reduction factor.

    sqrt((n-1)/n + (R+1)/R * lambda_1) with lambda_1 the largest eigenvalue
    of W^-1 B / n.  Zero within-chain variance returns 1.0 flagged degenerate.
    """
    mats = [np.atleast_2d(np.asarray(c, dtype=float)) for c in chains]
    R = len(mats)
    if R < 2:
        raise ValueError("need at least two chains")
    n = mats[0].shape[0]
    if n < 10 or any(m.shape != mats[0].shape for m in mats):
        raise ValueError("chains must share a length of at least 10")
    d = mats[0].shape[1]
    means = np.stack([m.mean(axis=0) for m in mats])
    grand = means.mean(axis=0)
    W = sum((m - mu).T @ (m - mu) for m, mu in zip(mats, means)) / (R * (n - 1))
    B_over_n = (means - grand).T @ (means - grand) / (R - 1)
    degenerate = not np.all(np.linalg.eigvalsh(W) > 1e-12 * max(np.trace(W) / d, 1e-30))
    if degenerate:
        value = 1.0
    else:
        lam = np.max(np.real(np.linalg.eigvals(np.linalg.solve(W, B_over_n))))
        value = float(np.sqrt((n - 1) / n + (R + 1) / R * max(lam, 0.0)))
    if with_flag:
        return value, degenerate
    return value


def metropolis_accept(log_ratio: float, rng) -> bool:
    """Symmetric-proposal Metropolis rule: always accept uphill moves."""
    if log_ratio >= 0.0:
        return True
    return np.log(rng.uniform()) < log_ratio


def sample_break_posterior(data: Dataset, active, J: Segmentation,
                           cfg: Optional[DreamConfig] = None) -> BreakPosterior:
    """Sample break dates conditional on the selected model's active set.

    Chains start from the uniform prior over the support windows; each
    iteration proposes a joint move per chain against the previous sweep's
    population snapshot, and accepts on the marginal-likelihood ratio.
    Proposals outside the prior support are auto-rejected.
    """
    T, K = data.T, data.K
    m = J.m
    if m < 2:
        raise InvalidSegmentationError("need at least one break to sample")
    cfg = (cfg or DreamConfig()).resolved(m, K)
    rng = np.random.default_rng(cfg.seed)
    supports = break_prior_support(J, T, cfg.min_duration)
    n_breaks = len(supports)
    lo = np.array([s[0] for s in supports])
    hi = np.array([s[1] for s in supports])

    cache = {}

    def log_ml_at(tau: np.ndarray) -> float:
        key = tuple(int(t) for t in tau)
        if key not in cache:
            try:
                cache[key] = log_marginal_likelihood(data, Segmentation(key), active)
            except (SingularDesignError, np.linalg.LinAlgError):
                cache[key] = -np.inf
        return cache[key]

    R = cfg.n_chains
    pop = np.stack([rng.integers(lo, hi + 1) for _ in range(R)])
    logp = np.array([log_ml_at(pop[r]) for r in range(R)])

    kept = []
    n_acc = 0
    n_prop = 0
    stuck = 0
    for it in range(cfg.n_iter):
        snapshot = pop.copy()
        accepted_any = False
        for r in range(R):
            if rng.uniform() < cfg.walk_prob:
                prop = snapshot[r] + rng.choice([-1, 1], size=n_breaks)
            else:
                delta = int(rng.integers(1, cfg.delta_max + 1))
                prop = dream_propose(snapshot[r], snapshot, r, delta, m, rng,
                                     jitter_sd=cfg.jitter_sd)
            n_prop += 1
            if np.any(prop < lo) or np.any(prop > hi):
                continue  # zero prior density
            lr = log_ml_at(prop) - logp[r]
            if metropolis_accept(lr, rng):
                pop[r] = prop
                logp[r] = log_ml_at(prop)
                n_acc += 1
                accepted_any = True
        stuck = 0 if accepted_any else stuck + 1
        if stuck == 500:
            warnings.warn("all chains rejected proposals for 500 consecutive iterations")
        if it >= cfg.burn_in:
            kept.append(pop.copy())

    kept = np.asarray(kept)  # (n_kept, R, n_breaks)
    per_chain = [kept[:, r, :] for r in range(R)]
    value, degenerate = psrf(per_chain, with_flag=True)
    draws = kept.reshape(-1, n_breaks)
    iv90 = [tuple(np.quantile(draws[:, i], [0.05, 0.95]).astype(int)) for i in range(n_breaks)]
    iv95 = [tuple(np.quantile(draws[:, i], [0.025, 0.975]).astype(int)) for i in range(n_breaks)]
    return BreakPosterior(
        draws=draws,
        acceptance_rate=n_acc / max(n_prop, 1),
        psrf=value,
        intervals_90=iv90,
        intervals_95=iv95,
        supports=supports,
        degenerate=degenerate,
    )
