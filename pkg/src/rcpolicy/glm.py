"""Small GLM core: weighted least squares and logistic IRLS.

These back the candidate learners, the propensity fit, and the subgroup
scan. Plain maximum likelihood, no penalization. Degenerate designs fall
back to an intercept-only fit instead of raising, and the fallback is
recorded on the returned fit so callers can surface a warning.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Linear predictors beyond this magnitude indicate (quasi-)separation:
# prediction clipping resolves nothing past |logit| ~ 13.8, and IRLS on
# separated data stalls near |eta| ~ 23 once residuals drop under the
# score tolerance, so a clean fit never legitimately reaches this.
_SEPARATION_ETA = 15.0
_IRLS_MAX_ITER = 100
_IRLS_TOL = 1e-10


@dataclass
class GlmFit:
    """Fitted coefficients for a linear or logistic model.

    coef aligns with the columns of the design matrix passed to the
    fitting routine. `fallback` is None for a clean fit, otherwise a
    short reason ("singular_design", "separation", "no_convergence").
    """

    coef: np.ndarray
    family: str  # "gaussian" or "binomial"
    fallback: str | None = None
    n_iter: int = 0

    def linpred(self, X: np.ndarray, offset: np.ndarray | None = None) -> np.ndarray:
        eta = X @ self.coef
        if offset is not None:
            eta = eta + offset
        return eta

    def predict(self, X: np.ndarray, offset: np.ndarray | None = None) -> np.ndarray:
        eta = self.linpred(X, offset)
        if self.family == "binomial":
            return expit(eta)
        return eta


def expit(eta: np.ndarray) -> np.ndarray:
    # numerically safe logistic
    out = np.empty_like(eta, dtype=float)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def logit(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


def design_is_singular(X: np.ndarray) -> bool:
    return np.linalg.matrix_rank(X) < X.shape[1]


def _weighted_lstsq(X: np.ndarray, y: np.ndarray, w: np.ndarray | None) -> np.ndarray:
    if w is None:
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        return coef
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    return coef


def fit_linear(
    X: np.ndarray,
    y: np.ndarray,
    weights: np.ndarray | None = None,
) -> GlmFit:
    """Ordinary (or weighted) least squares with a singularity fallback."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if design_is_singular(X):
        coef = np.zeros(X.shape[1])
        coef[_intercept_col(X)] = _weighted_mean(y, weights)
        return GlmFit(coef=coef, family="gaussian", fallback="singular_design")
    coef = _weighted_lstsq(X, y, weights)
    return GlmFit(coef=coef, family="gaussian")


def fit_logistic(
    X: np.ndarray,
    y: np.ndarray,
    weights: np.ndarray | None = None,
    offset: np.ndarray | None = None,
    max_iter: int = _IRLS_MAX_ITER,
    tol: float = _IRLS_TOL,
) -> GlmFit:
    """Logistic regression by IRLS.

    y may be any values in [0, 1] (quasi-binomial working likelihood).
    Separation and non-convergence fall back to the offset-adjusted
    intercept-only solution rather than returning runaway coefficients.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if design_is_singular(X):
        return _logistic_intercept_fallback(X, y, weights, offset, "singular_design")

    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    off = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    beta = np.zeros(p)
    for it in range(1, max_iter + 1):
        eta = X @ beta + off
        mu = expit(eta)
        v = mu * (1.0 - mu)
        score = X.T @ (w * (y - mu))
        if np.max(np.abs(score)) / n <= tol:
            if np.max(np.abs(eta - off)) > _SEPARATION_ETA:
                return _logistic_intercept_fallback(X, y, weights, offset, "separation")
            return GlmFit(coef=beta, family="binomial", n_iter=it)
        irls_w = w * np.maximum(v, 1e-12)
        z = (eta - off) + (y - mu) / np.maximum(v, 1e-12)
        beta_new = _weighted_lstsq(X, z, irls_w)
        if not np.all(np.isfinite(beta_new)):
            return _logistic_intercept_fallback(X, y, weights, offset, "no_convergence")
        step = beta_new - beta
        if np.max(np.abs(X @ beta_new + off)) > 2 * _SEPARATION_ETA:
            # runaway linear predictor: separation in progress
            return _logistic_intercept_fallback(X, y, weights, offset, "separation")
        beta = beta_new
        if np.max(np.abs(step)) < tol:
            eta = X @ beta + off
            if np.max(np.abs(eta - off)) > _SEPARATION_ETA:
                return _logistic_intercept_fallback(X, y, weights, offset, "separation")
            return GlmFit(coef=beta, family="binomial", n_iter=it)
    return _logistic_intercept_fallback(X, y, weights, offset, "no_convergence")


def _intercept_col(X: np.ndarray) -> int:
    # prefer an all-ones column if the design has one, else column 0
    for j in range(X.shape[1]):
        if np.all(X[:, j] == 1.0):
            return j
    return 0


def _weighted_mean(y: np.ndarray, w: np.ndarray | None) -> float:
    if w is None:
        return float(np.mean(y))
    tw = float(np.sum(w))
    if tw <= 0:
        return float(np.mean(y))
    return float(np.sum(w * y) / tw)


def _logistic_intercept_fallback(
    X: np.ndarray,
    y: np.ndarray,
    weights: np.ndarray | None,
    offset: np.ndarray | None,
    reason: str,
) -> GlmFit:
    """Intercept-only logistic fit (1-D Newton), used when the full fit fails."""
    n = X.shape[0]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    off = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    eps = 0.0
    for _ in range(_IRLS_MAX_ITER):
        mu = expit(off + eps)
        grad = float(np.sum(w * (y - mu)))
        if abs(grad) / n <= _IRLS_TOL:
            break
        hess = -float(np.sum(w * mu * (1.0 - mu)))
        if hess >= -1e-300:
            break
        eps -= grad / hess
        eps = float(np.clip(eps, -_SEPARATION_ETA, _SEPARATION_ETA))
    coef = np.zeros(X.shape[1])
    coef[_intercept_col(X)] = eps
    return GlmFit(coef=coef, family="binomial", fallback=reason)


def gaussian_aic(X: np.ndarray, y: np.ndarray, fit: GlmFit) -> float:
    resid = y - X @ fit.coef
    n = len(y)
    rss = float(resid @ resid)
    rss = max(rss, 1e-300)
    return n * np.log(rss / n) + 2 * X.shape[1]


def binomial_aic(X: np.ndarray, y: np.ndarray, fit: GlmFit) -> float:
    p = np.clip(fit.predict(X), 1e-12, 1 - 1e-12)
    ll = float(np.sum(y * np.log(p) + (1 - y) * np.log1p(-p)))
    return -2 * ll + 2 * X.shape[1]


def forward_stepwise_aic(
    candidate_cols: list[np.ndarray],
    y: np.ndarray,
    family: str,
    max_terms: int = 5,
) -> tuple[list[int], GlmFit]:
    """Greedy forward selection by AIC over candidate columns.

    Starts from the intercept-only model and adds at most `max_terms`
    columns, each time taking the single addition that lowers AIC most.
    Returns the chosen column indices (into candidate_cols) and the fit
    on [intercept, chosen columns].
    """
    n = len(y)
    ones = np.ones((n, 1))

    def fit_on(idx: list[int]) -> tuple[GlmFit, float]:
        X = np.hstack([ones] + [candidate_cols[j][:, None] for j in idx]) if idx else ones
        if family == "binomial":
            f = fit_logistic(X, y)
            return f, binomial_aic(X, y, f)
        f = fit_linear(X, y)
        return f, gaussian_aic(X, y, f)

    chosen: list[int] = []
    best_fit, best_aic = fit_on(chosen)
    remaining = list(range(len(candidate_cols)))
    while remaining and len(chosen) < max_terms:
        trial = [(j, *fit_on(chosen + [j])) for j in remaining]
        j_best, f_best, aic_best = min(trial, key=lambda t: t[2])
        if aic_best < best_aic - 1e-12:
            chosen.append(j_best)
            remaining.remove(j_best)
            best_fit, best_aic = f_best, aic_best
        else:
            break
    return chosen, best_fit
