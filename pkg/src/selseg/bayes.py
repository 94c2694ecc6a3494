"""Exact conditional-normal posteriors, Student-t predictives and model
averaging for a fixed segmentation and active set.

The prior is flat on (beta_1, log sigma2), normal with precision
g * X2' M X2 / sigma2 on the free first-difference block, and a point mass
at zero on the rest.  Everything downstream (posterior moments, one-step
predictive density, posterior draws) is closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.special import gammaln

from .exceptions import InsufficientObservationsError, SingularDesignError
from .model_select import count_active_segments, g_shrinkage
from .regress_core import (
    Dataset,
    Segmentation,
    active_columns,
    build_break_design,
    ols,
    validate_active,
)


@dataclass(frozen=True)
class PosteriorParams:
    """Posterior hyper-parameters for one model.

    sigma2 | y is inverse gamma (a_sigma, b_sigma); the difference block and
    the joint psi = (beta_1, dbeta) are normal given sigma2, with covariance
    scales to be multiplied by sigma2.  ``B`` maps dbeta into the conditional
    mean of beta_1 and ``Sigma_beta1`` is (X1'X1)^-1.
    """

    a_sigma: float
    b_sigma: float
    mu_dbeta: np.ndarray
    Sigma_dbeta_scale: np.ndarray
    mu_psi: np.ndarray
    Sigma_psi_scale: np.ndarray
    active: frozenset
    g: float
    K: int
    beta1_hat: np.ndarray = field(repr=False, default=None)
    B: np.ndarray = field(repr=False, default=None)
    Sigma_beta1: np.ndarray = field(repr=False, default=None)

    @property
    def sigma2_mean(self) -> float:
        return self.b_sigma / (self.a_sigma - 1.0)


def posterior_params(data: Dataset, seg: Segmentation, active: Iterable,
                     g: Optional[float] = None) -> PosteriorParams:
    """Exact posterior quantities for the model with the given active set.

    g defaults to the same shrinkage rule used by the marginal likelihood.
    """
    act = validate_active(active, seg.m, data.K)
    T, K = data.T, data.K
    k = len(act)
    if T <= K + k:
        raise InsufficientObservationsError(f"need T > K + k = {K + k}")
    if g is None:
        g, _ = g_shrinkage(T, k, count_active_segments(act))

    X1 = data.X
    fit1 = ols(data.y, X1)
    beta1_hat = fit1.beta_hat
    Sigma_beta1 = np.linalg.inv(X1.T @ X1)

    if k == 0:
        return PosteriorParams(
            a_sigma=(T - K) / 2.0,
            b_sigma=fit1.rss / 2.0,
            mu_dbeta=np.empty(0),
            Sigma_dbeta_scale=np.empty((0, 0)),
            mu_psi=beta1_hat,
            Sigma_psi_scale=Sigma_beta1,
            active=act,
            g=g,
            K=K,
            beta1_hat=beta1_hat,
            B=np.empty((K, 0)),
            Sigma_beta1=Sigma_beta1,
        )

    design = build_break_design(data, seg)
    X2 = design.Xfull[:, active_columns(act, K)]
    B = Sigma_beta1 @ (X1.T @ X2)        # (X1'X1)^-1 X1'X2
    MX2 = X2 - X1 @ B                    # M_X1 X2
    S = X2.T @ MX2                       # X2' M X2
    try:
        S_inv = np.linalg.inv(S)
    except np.linalg.LinAlgError as exc:
        raise SingularDesignError(f"projected break columns are collinear: {exc}")
    My = data.y - X1 @ (Sigma_beta1 @ (X1.T @ data.y))
    mu_dbeta = (1.0 / (1.0 + g)) * (S_inv @ (X2.T @ My))
    Sigma_dbeta = (1.0 / (1.0 + g)) * S_inv

    s_base = fit1.rss
    s_full = float(data.y @ My) - float((X2.T @ My) @ (S_inv @ (X2.T @ My)))
    s_full = max(s_full, 0.0)
    w = g / (1.0 + g)
    b_sigma = (w * s_base + (1.0 - w) * s_full) / 2.0

    mu_psi = np.concatenate([beta1_hat - B @ mu_dbeta, mu_dbeta])
    top_left = Sigma_beta1 + B @ Sigma_dbeta @ B.T
    top_right = -B @ Sigma_dbeta
    Sigma_psi = np.block([[top_left, top_right], [top_right.T, Sigma_dbeta]])
    return PosteriorParams(
        a_sigma=(T - K) / 2.0,
        b_sigma=float(b_sigma),
        mu_dbeta=mu_dbeta,
        Sigma_dbeta_scale=Sigma_dbeta,
        mu_psi=mu_psi,
        Sigma_psi_scale=Sigma_psi,
        active=act,
        g=g,
        K=K,
        beta1_hat=beta1_hat,
        B=B,
        Sigma_beta1=Sigma_beta1,
    )


@dataclass(frozen=True)
class PredictiveDensity:
    """One-step predictive: Student-t with the given location, squared scale
    and degrees of freedom."""

    location: float
    scale: float  # squared scale (b/a)(x'Sigma x + 1)
    dof: float

    def logpdf(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        nu, s2 = self.dof, self.scale
        q2 = (y - self.location) ** 2 / s2
        return (
            gammaln((nu + 1.0) / 2.0) - gammaln(nu / 2.0)
            - 0.5 * np.log(np.pi * nu * s2)
            - 0.5 * (nu + 1.0) * np.log1p(q2 / nu)
        )

    def pdf(self, y) -> np.ndarray:
        return np.exp(self.logpdf(y))

    @property
    def mean(self) -> float:
        return self.location


def forecast_row(x_base: np.ndarray, active: Iterable) -> np.ndarray:
    """Covariate row in the (base columns, active columns) layout for a
    forecast period; every active break lies before T+1 by construction, so
    each active column simply repeats its base covariate."""
    x_base = np.asarray(x_base, dtype=float).ravel()
    extra = [x_base[k - 1] for (_, k) in sorted(active)]
    return np.concatenate([x_base, np.asarray(extra, dtype=float)])


def predictive(pp: PosteriorParams, x_next: np.ndarray) -> PredictiveDensity:
    """Student-t one-step predictive: location x'mu_psi, squared scale
    (b/a)(x'Sigma_psi x + 1), dof 2 a_sigma."""
    x = np.asarray(x_next, dtype=float).ravel()
    if x.shape[0] != pp.mu_psi.shape[0]:
        raise ValueError(
            f"x_next has {x.shape[0]} entries, expected {pp.mu_psi.shape[0]}"
        )
    quad = float(x @ pp.Sigma_psi_scale @ x) + 1.0
    return PredictiveDensity(
        location=float(x @ pp.mu_psi),
        scale=(pp.b_sigma / pp.a_sigma) * quad,
        dof=2.0 * pp.a_sigma,
    )


def predictive_multi(pp: PosteriorParams, X_next: np.ndarray):
    """h-step joint predictive for exogenous covariate rows: multivariate t
    with location X mu_psi, scale (b/a)(X Sigma X' + I), dof 2 a_sigma.

    Only valid when no covariate is a lagged response; autoregressive models
    iterate one-step forecasts with plug-in means instead.
    """
    X = np.atleast_2d(np.asarray(X_next, dtype=float))
    loc = X @ pp.mu_psi
    scale = (pp.b_sigma / pp.a_sigma) * (X @ pp.Sigma_psi_scale @ X.T + np.eye(X.shape[0]))
    return loc, scale, 2.0 * pp.a_sigma


@dataclass(frozen=True)
class BmaPredictive:
    """Probability-weighted mixture of per-model Student-t predictives."""

    components: tuple
    weights: np.ndarray

    def logpdf(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        logs = np.stack([c.logpdf(y) for c in self.components], axis=0)
        logw = np.log(self.weights).reshape((-1,) + (1,) * y.ndim)
        return np.logaddexp.reduce(logs + logw, axis=0)

    def pdf(self, y) -> np.ndarray:
        return np.exp(self.logpdf(y))

    @property
    def mean(self) -> float:
        return float(np.dot(self.weights, [c.location for c in self.components]))


def bma_predictive(data: Dataset, seg: Segmentation, candidates: Sequence,
                   x_base: np.ndarray) -> BmaPredictive:
    """Mixture predictive over model candidates weighted by their posterior
    probabilities; the point forecast is the weighted average of locations."""
    ok = [c for c in candidates if not getattr(c, "failed", False) and c.post_prob > 0.0]
    if not ok:
        raise ValueError("no candidates with positive posterior probability")
    comps, weights = [], []
    for c in ok:
        pp = posterior_params(data, seg, c.active, g=c.g)
        comps.append(predictive(pp, forecast_row(x_base, c.active)))
        weights.append(c.post_prob)
    w = np.asarray(weights, dtype=float)
    w /= w.sum()
    return BmaPredictive(components=tuple(comps), weights=w)


def sample_posterior(pp: PosteriorParams, n: int, seed=0,
                     n_diff_total: Optional[int] = None):
    """Draw (beta_1, dbeta, sigma2) from the posterior.

    sigma2 comes from the inverse gamma via the gamma-reciprocal transform;
    dbeta and beta_1 follow their conditional normals.  Inactive difference
    entries are exactly zero.  Returns arrays of shapes (n, K),
    (n, n_diff_total or k) and (n,).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    sigma2 = pp.b_sigma / rng.gamma(pp.a_sigma, 1.0, size=n)
    k = pp.mu_dbeta.shape[0]
    K = pp.K

    if k:
        Ld = np.linalg.cholesky(pp.Sigma_dbeta_scale)
        z = rng.standard_normal((n, k))
        dbeta_act = pp.mu_dbeta[None, :] + np.sqrt(sigma2)[:, None] * (z @ Ld.T)
        mean_b1 = pp.beta1_hat[None, :] - dbeta_act @ pp.B.T
    else:
        dbeta_act = np.empty((n, 0))
        mean_b1 = np.broadcast_to(pp.beta1_hat, (n, K)).copy()
    Lb = np.linalg.cholesky(pp.Sigma_beta1)
    beta1 = mean_b1 + np.sqrt(sigma2)[:, None] * (rng.standard_normal((n, K)) @ Lb.T)

    if n_diff_total is None:
        dbeta = dbeta_act
    else:
        dbeta = np.zeros((n, n_diff_total))
        for i, (j, kk) in enumerate(sorted(pp.active)):
            dbeta[:, (j - 2) * K + (kk - 1)] = dbeta_act[:, i]
    return beta1, dbeta, sigma2
