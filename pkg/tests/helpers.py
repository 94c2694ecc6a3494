"""Shared test oracles: brute-force fits, numerical integration of the
conditional-normal model, and small simulators kept independent of the
library code paths they check."""

import numpy as np
from scipy import integrate

from selseg import Dataset, Segmentation, build_break_design


def normal_equations_ols(y, X):
    """(X'X)^-1 X'y in extended precision, with the residual sum of squares."""
    Xl = np.asarray(X, dtype=np.longdouble)
    yl = np.asarray(y, dtype=np.longdouble)
    beta = np.linalg.solve((Xl.T @ Xl).astype(float), (Xl.T @ yl).astype(float))
    r = np.asarray(y, float) - np.asarray(X, float) @ beta
    return beta, float(r @ r)


def loop_break_design(data, seg):
    """Element-by-element construction of the break design."""
    T, K, m = data.T, data.K, seg.m
    b = seg.boundaries(T)
    out = np.zeros((T, m * K))
    for j in range(1, m + 1):
        for t in range(1, T + 1):
            if t > b[j - 1]:
                out[t - 1, (j - 1) * K : j * K] = data.X[t - 1]
    return out


def marginal_likelihood_integrand(data, seg, active, g):
    """Log integrand of the conditional-normal model in (beta1, dbeta, log s2)
    coordinates (flat prior on log sigma2 absorbs the sigma^-2 prior and the
    jacobian)."""
    design = build_break_design(data, seg)
    cols = [(j - 1) * data.K + (k - 1) for (j, k) in sorted(active)]
    X1 = data.X
    X2 = design.Xfull[:, cols]
    M = np.eye(data.T) - X1 @ np.linalg.inv(X1.T @ X1) @ X1.T
    P = g * (X2.T @ M @ X2)  # prior precision scale of dbeta
    sign, logdet_P = np.linalg.slogdet(P) if P.size else (1.0, 0.0)
    k = len(cols)
    T = data.T

    def logf(b1, db, logs2):
        s2 = np.exp(logs2)
        r = data.y - X1 @ np.atleast_1d(b1) - (X2 @ np.atleast_1d(db) if k else 0.0)
        loglik = -T / 2 * np.log(2 * np.pi * s2) - (r @ r) / (2 * s2)
        logprior = 0.0
        if k:
            db = np.atleast_1d(db)
            logprior = 0.5 * (logdet_P - k * np.log(2 * np.pi * s2)) - (db @ P @ db) / (2 * s2)
        return loglik + logprior

    return logf


def quad_log_marginal(data, seg, active, g, widths=14.0, s2_span=60.0):
    """Adaptive 3-d quadrature of the model over (beta1, dbeta, sigma2); only
    usable for K = 1 and one active entry."""
    from selseg import ols

    design = build_break_design(data, seg)
    cols = [(j - 1) * data.K + (k - 1) for (j, k) in sorted(active)]
    fit = ols(data.y, np.hstack([data.X, design.Xfull[:, cols]]))
    b1h, dbh = fit.beta_hat
    s2h = fit.rss / data.T
    w = widths * np.sqrt(s2h)
    logf = marginal_likelihood_integrand(data, seg, active, g)
    val, err = integrate.tplquad(
        lambda b1, db, logs2: np.exp(logf(b1, db, logs2)),
        np.log(s2h / s2_span), np.log(s2h * s2_span),
        lambda s: dbh - w, lambda s: dbh + w,
        lambda s, d: b1h - w, lambda s, d: b1h + w,
        epsabs=1e-14, epsrel=1e-10,
    )
    return np.log(val), err / val


def simulate_single_shift(T, shift, at, sd=1.0, seed=0, ar=None):
    """White noise with one mean shift (or one AR-coefficient switch)."""
    rng = np.random.default_rng(seed)
    if ar is None:
        y = rng.normal(0.0, sd, T)
        y[at:] += shift
        return Dataset(y=y, X=np.ones((T, 1)), names=("const",))
    phi1, phi2 = ar
    y = np.zeros(T + 201)
    e = rng.normal(0.0, sd, T + 200)
    for t in range(T + 200):
        phi = phi1 if t < 200 + at else phi2
        y[t + 1] = phi * y[t] + e[t]
    yy = y[201:]
    X = np.column_stack([np.ones(T), y[200:-1]])
    return Dataset(y=yy, X=X, names=("const", "AR1"))
