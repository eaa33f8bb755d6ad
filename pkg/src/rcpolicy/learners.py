"""Candidate learners and stacked ensembles.

Three fitted objects come out of here: the outcome regression
E[Y | A, W], the treatment mechanism g(1 | W), and the blip regression
B(W) fit to a doubly-robust pseudo-outcome. The outcome and blip models
are convex-weighted stacks: each candidate is fit per cross-validation
fold, the held-out predictions form a matrix, and the weights minimize
held-out squared error over the probability simplex.

Library specs (strings):
    "mean"        intercept-only
    "glm"         main terms; (A, W, A*W) for the outcome, W for the blip
    "univariate"  one model per covariate (expands to "uni:<name>")
    "uni:<name>"  single-covariate model
    "step_aic"    forward stepwise by AIC, at most 5 terms

Degenerate fits (singular designs, separation) fall back to
intercept-only candidates and the reason lands in the model's warnings.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import chi2

from . import glm
from .data import Dataset

__all__ = [
    "BlipModel",
    "OutcomeModel",
    "PropensityModel",
    "SubgroupLevel",
    "SubgroupResult",
    "fit_blip",
    "fit_outcome",
    "fit_propensity",
    "make_pseudo_outcome",
    "stratified_folds",
    "subgroup_scan",
]

PRED_CLIP = 1e-6  # keeps logistic offsets finite
STEPWISE_MAX_TERMS = 5

_FOLD_STREAM = 101  # rng stream tags under the master seed
_SEED_DEFAULT = 0


# ---------------------------------------------------------------------------
# fold assignment


def stratified_folds(a: np.ndarray, n_folds: int, seed: int) -> np.ndarray:
    """Fold ids in [0, n_folds) balanced within each treatment arm.

    Each arm's indices are shuffled and dealt round-robin, so folds have
    both arms whenever an arm has at least n_folds members.
    """
    a = np.asarray(a)
    n = len(a)
    if n_folds < 2:
        raise ValueError("need at least 2 folds")
    if n_folds > n:
        raise ValueError("more folds than observations")
    rng = np.random.default_rng((seed, _FOLD_STREAM))
    fold = np.empty(n, dtype=int)
    for arm in (0, 1):
        idx = np.flatnonzero(a == arm)
        idx = rng.permutation(idx)
        fold[idx] = np.arange(len(idx)) % n_folds
    return fold


# ---------------------------------------------------------------------------
# candidate machinery

# Candidates are linear scorers over a shared term matrix. For the
# outcome the terms are [1, A, W..., A*W...]; for the blip just [1, W...].


@dataclass(frozen=True)
class LinearScorer:
    name: str
    terms: tuple[int, ...]  # columns of the term matrix
    coef: np.ndarray
    family: str  # "gaussian" or "binomial"
    fallback: str | None = None

    def predict_terms(self, T: np.ndarray) -> np.ndarray:
        eta = T[:, self.terms] @ self.coef
        if self.family == "binomial":
            return glm.expit(eta)
        return eta


def _outcome_terms(a, w: np.ndarray) -> np.ndarray:
    w = np.atleast_2d(w)
    n, p = w.shape
    a = np.broadcast_to(np.asarray(a, dtype=float), (n,))
    return np.column_stack([np.ones(n), a, w, a[:, None] * w])


def _blip_terms(w: np.ndarray) -> np.ndarray:
    w = np.atleast_2d(w)
    return np.column_stack([np.ones(w.shape[0]), w])


def _expand_library(library: Sequence[str], covariate_names: Sequence[str]) -> list[str]:
    names = list(covariate_names)
    out: list[str] = []
    for spec in library:
        if spec == "univariate":
            out.extend(f"uni:{nm}" for nm in names)
        elif spec in ("mean", "glm", "step_aic") or spec.startswith("uni:"):
            out.append(spec)
        else:
            raise ValueError(f"unknown learner spec {spec!r}")
    if not out:
        raise ValueError("empty learner library")
    # drop duplicates, keep first occurrence (order sets tie-breaking)
    seen: set[str] = set()
    uniq = [s for s in out if not (s in seen or seen.add(s))]
    return uniq


def _candidate_terms(
    spec: str, covariate_names: Sequence[str], kind: str
) -> tuple[int, ...] | None:
    """Term columns for a candidate; None means stepwise (data-dependent)."""
    p = len(covariate_names)
    if kind == "outcome":
        w_cols = {nm: 2 + j for j, nm in enumerate(covariate_names)}
        aw_cols = {nm: 2 + p + j for j, nm in enumerate(covariate_names)}
        if spec == "mean":
            return (0,)
        if spec == "glm":
            return (0, 1, *range(2, 2 + 2 * p))
        if spec.startswith("uni:"):
            nm = spec[4:]
            if nm not in w_cols:
                raise ValueError(f"unknown covariate in learner spec {spec!r}")
            return (0, 1, w_cols[nm], aw_cols[nm])
    else:
        w_cols = {nm: 1 + j for j, nm in enumerate(covariate_names)}
        if spec == "mean":
            return (0,)
        if spec == "glm":
            return (0, *range(1, 1 + p))
        if spec.startswith("uni:"):
            nm = spec[4:]
            if nm not in w_cols:
                raise ValueError(f"unknown covariate in learner spec {spec!r}")
            return (0, w_cols[nm])
    if spec == "step_aic":
        return None
    raise ValueError(f"unknown learner spec {spec!r}")


def _fit_candidate(
    spec: str,
    T: np.ndarray,
    y: np.ndarray,
    family: str,
    covariate_names: Sequence[str],
    kind: str,
) -> LinearScorer:
    terms = _candidate_terms(spec, covariate_names, kind)
    if terms is None:
        # stepwise: pool of non-intercept terms, greedy AIC selection
        pool = list(range(1, T.shape[1]))
        cols = [T[:, j] for j in pool]
        chosen, fit = glm.forward_stepwise_aic(cols, y, family, STEPWISE_MAX_TERMS)
        terms = (0, *[pool[j] for j in chosen])
        return LinearScorer(spec, terms, fit.coef, family, fit.fallback)
    X = T[:, terms]
    fit = glm.fit_logistic(X, y) if family == "binomial" else glm.fit_linear(X, y)
    return LinearScorer(spec, terms, fit.coef, family, fit.fallback)


def _stack(
    T: np.ndarray,
    y: np.ndarray,
    fold_id: np.ndarray,
    specs: list[str],
    family: str,
    covariate_names: Sequence[str],
    kind: str,
):
    """Cross-validated candidate predictions, simplex weights, full refits."""
    from .simplex import simplex_lstsq

    n = len(y)
    k = len(specs)
    Z = np.empty((n, k))
    warnings: list[str] = []
    for v in np.unique(fold_id):
        train = fold_id != v
        val = ~train
        for j, spec in enumerate(specs):
            scorer = _fit_candidate(spec, T[train], y[train], family, covariate_names, kind)
            if scorer.fallback:
                warnings.append(f"{spec}: {scorer.fallback} (fold {v})")
            Z[val, j] = scorer.predict_terms(T[val])
    weights = simplex_lstsq(Z, y)
    cv_risks = np.mean((y[:, None] - Z) ** 2, axis=0)
    ensemble_risk = float(np.mean((y - Z @ weights) ** 2))
    fitted = []
    for spec in specs:
        scorer = _fit_candidate(spec, T, y, family, covariate_names, kind)
        if scorer.fallback:
            warnings.append(f"{spec}: {scorer.fallback} (full fit)")
        fitted.append(scorer)
    return fitted, weights, cv_risks, ensemble_risk, tuple(dict.fromkeys(warnings))


# ---------------------------------------------------------------------------
# outcome regression


@dataclass(frozen=True)
class OutcomeModel:
    """Stacked estimate of E[Y | A, W] on the scaled-outcome space."""

    candidates: tuple[LinearScorer, ...]
    weights: np.ndarray
    cv_risks: np.ndarray
    ensemble_cv_risk: float
    covariate_names: tuple[str, ...]
    warnings: tuple[str, ...] = ()

    @property
    def candidate_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.candidates)

    def predict(self, a, w: np.ndarray) -> np.ndarray:
        T = _outcome_terms(a, w)
        out = np.zeros(T.shape[0])
        for wt, cand in zip(self.weights, self.candidates):
            if wt > 0:
                out += wt * cand.predict_terms(T)
        return np.clip(out, PRED_CLIP, 1.0 - PRED_CLIP)

    def predict_both(self, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.predict(0, w), self.predict(1, w)


def fit_outcome(
    ds: Dataset,
    library: Sequence[str] = ("mean", "glm", "univariate", "step_aic"),
    folds: int = 10,
    seed: int = _SEED_DEFAULT,
) -> OutcomeModel:
    """Stacked outcome regression with seeded, A-stratified CV folds.

    Binary outcomes use logistic candidates, rescaled continuous outcomes
    linear ones; either way the stack minimizes held-out squared error.
    """
    if ds.n < folds:
        raise ValueError("need n >= folds")
    specs = _expand_library(library, ds.covariate_names)
    if np.any(ds.y < 0) or np.any(ds.y > 1):
        raise ValueError("outcome must be scaled to [0, 1] before fitting")
    family = "binomial" if ds.outcome_kind == "binary" else "gaussian"
    fold_id = stratified_folds(ds.a, folds, seed)
    T = _outcome_terms(ds.a, ds.w)
    fitted, weights, cv_risks, ens, warn = _stack(
        T, ds.y, fold_id, specs, family, ds.covariate_names, "outcome"
    )
    return OutcomeModel(
        candidates=tuple(fitted),
        weights=weights,
        cv_risks=cv_risks,
        ensemble_cv_risk=ens,
        covariate_names=ds.covariate_names,
        warnings=warn,
    )


# ---------------------------------------------------------------------------
# treatment mechanism


@dataclass(frozen=True)
class PropensityModel:
    """g(1 | W), either a known constant or a fitted logistic model."""

    mode: str  # "known_constant" or "estimated"
    g_min: float
    constant: float | None = None
    scorer: LinearScorer | None = None
    warnings: tuple[str, ...] = ()

    def predict(self, w: np.ndarray) -> np.ndarray:
        w = np.atleast_2d(w)
        if self.mode == "known_constant":
            out = np.full(w.shape[0], float(self.constant))
        else:
            T = _blip_terms(w)  # [1, W] design
            out = self.scorer.predict_terms(T)
        return np.clip(out, self.g_min, 1.0 - self.g_min)


def fit_propensity(
    ds: Dataset,
    known_value: float | None = None,
    estimate: bool | None = None,
    g_min: float = 0.01,
) -> PropensityModel:
    """Treatment mechanism, known or estimated by main-terms logistic.

    With known_value given the default is to use it as-is; estimate=True
    fits the logistic anyway (can sharpen efficiency under randomization).
    Separation or other fit failures revert to the known value, or to the
    empirical treated fraction, with a warning.
    """
    if estimate is None:
        estimate = known_value is None
    if not estimate:
        if known_value is None:
            raise ValueError("need known_value when not estimating")
        return PropensityModel(mode="known_constant", g_min=g_min, constant=float(known_value))
    if not ds.has_both_arms:
        if known_value is not None:
            return PropensityModel(
                mode="known_constant",
                g_min=g_min,
                constant=float(known_value),
                warnings=("single-arm data: reverted to known value",),
            )
        raise ValueError("single-arm dataset: cannot estimate the treatment mechanism")
    T = _blip_terms(ds.w)
    fit = glm.fit_logistic(T, ds.a.astype(float))
    if fit.fallback is not None:
        fallback_value = known_value if known_value is not None else float(np.mean(ds.a))
        return PropensityModel(
            mode="known_constant",
            g_min=g_min,
            constant=fallback_value,
            warnings=(f"propensity fit fell back ({fit.fallback}); using constant",),
        )
    scorer = LinearScorer("glm", tuple(range(T.shape[1])), fit.coef, "binomial")
    return PropensityModel(mode="estimated", g_min=g_min, scorer=scorer)


# ---------------------------------------------------------------------------
# blip pseudo-outcome and blip regression


def make_pseudo_outcome(ds: Dataset, q: OutcomeModel, g: PropensityModel) -> np.ndarray:
    """Doubly-robust blip transform.

    D_i = (2A_i - 1) / g(A_i|W_i) * (Y_i - E[Y|A_i,W_i]) + E[Y|1,W_i] - E[Y|0,W_i].
    Consistent for the blip if either nuisance is correct; the propensity
    truncation keeps the inverse weight finite.
    """
    g1 = g.predict(ds.w)
    g_obs = np.where(ds.a == 1, g1, 1.0 - g1)
    qa = q.predict(ds.a, ds.w)
    q0, q1 = q.predict_both(ds.w)
    sign = 2.0 * ds.a - 1.0
    return sign / g_obs * (ds.y - qa) + q1 - q0


@dataclass(frozen=True)
class BlipModel:
    """Stacked regression of the pseudo-outcome on covariates."""

    candidates: tuple[LinearScorer, ...]
    weights: np.ndarray
    cv_risks: np.ndarray
    ensemble_cv_risk: float
    covariate_names: tuple[str, ...]
    warnings: tuple[str, ...] = ()

    @property
    def candidate_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.candidates)

    def predict(self, w: np.ndarray) -> np.ndarray:
        T = _blip_terms(w)
        out = np.zeros(T.shape[0])
        for wt, cand in zip(self.weights, self.candidates):
            if wt > 0:
                out += wt * cand.predict_terms(T)
        return out

    def to_dict(self) -> dict:
        return {
            "covariate_names": list(self.covariate_names),
            "weights": [float(x) for x in self.weights],
            "cv_risks": [float(x) for x in self.cv_risks],
            "ensemble_cv_risk": self.ensemble_cv_risk,
            "warnings": list(self.warnings),
            "candidates": [
                {"name": c.name, "terms": list(c.terms), "coef": [float(x) for x in c.coef]}
                for c in self.candidates
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BlipModel":
        cands = tuple(
            LinearScorer(
                name=c["name"],
                terms=tuple(c["terms"]),
                coef=np.asarray(c["coef"], dtype=float),
                family="gaussian",
            )
            for c in d["candidates"]
        )
        return cls(
            candidates=cands,
            weights=np.asarray(d["weights"], dtype=float),
            cv_risks=np.asarray(d["cv_risks"], dtype=float),
            ensemble_cv_risk=float(d["ensemble_cv_risk"]),
            covariate_names=tuple(d["covariate_names"]),
            warnings=tuple(d.get("warnings", ())),
        )


def fit_blip(
    ds: Dataset,
    q: OutcomeModel,
    g: PropensityModel,
    library: Sequence[str] = ("mean", "glm", "univariate", "step_aic"),
    folds: int = 10,
    seed: int = _SEED_DEFAULT,
) -> BlipModel:
    """Stacked blip regression via the pseudo-outcome.

    Candidates regress D on W with squared-error risk; the metalearner
    weights live on the probability simplex, so the ensemble's CV risk
    is never above the best single candidate's.
    """
    if ds.n < folds:
        raise ValueError("need n >= folds")
    specs = _expand_library(library, ds.covariate_names)
    d_pseudo = make_pseudo_outcome(ds, q, g)
    fold_id = stratified_folds(ds.a, folds, seed)
    T = _blip_terms(ds.w)
    fitted, weights, cv_risks, ens, warn = _stack(
        T, d_pseudo, fold_id, specs, "gaussian", ds.covariate_names, "blip"
    )
    return BlipModel(
        candidates=tuple(fitted),
        weights=weights,
        cv_risks=cv_risks,
        ensemble_cv_risk=ens,
        covariate_names=ds.covariate_names,
        warnings=warn,
    )


# ---------------------------------------------------------------------------
# subgroup interaction scan


@dataclass(frozen=True)
class SubgroupLevel:
    level: float
    n: int
    effect: float  # difference in arm means within the level (nan if one-armed)


@dataclass(frozen=True)
class SubgroupResult:
    covariate: str
    p_value: float
    flagged: bool
    note: str | None = None
    levels: tuple[SubgroupLevel, ...] = ()


def subgroup_scan(ds: Dataset, alpha: float = 0.1, max_levels: int = 10) -> list[SubgroupResult]:
    """Per-covariate treatment-interaction scan.

    For each covariate, a likelihood ratio test compares the linear
    regressions y ~ a + w_j + a*w_j and y ~ a + w_j; covariates with
    p < alpha are flagged. Covariates with few distinct values also get
    per-level arm-mean differences for plotting. Constant covariates are
    skipped with a note.
    """
    if ds.n <= 4:
        raise ValueError("need more than 4 observations per tested model")
    if not ds.has_both_arms:
        raise ValueError("subgroup scan needs both treatment arms")
    a = ds.a.astype(float)
    y = ds.y
    results: list[SubgroupResult] = []
    for j, name in enumerate(ds.covariate_names):
        x = ds.w[:, j]
        uniq = np.unique(x)
        if uniq.size == 1:
            results.append(
                SubgroupResult(covariate=name, p_value=float("nan"), flagged=False,
                               note="constant covariate, skipped")
            )
            continue
        ones = np.ones(ds.n)
        X0 = np.column_stack([ones, a, x])
        X1 = np.column_stack([ones, a, x, a * x])
        rss0 = _rss(X0, y)
        rss1 = _rss(X1, y)
        if rss1 <= 0.0:
            p = 1.0 if rss0 <= 0.0 else 0.0
        else:
            lr = ds.n * np.log(rss0 / rss1)
            p = float(chi2.sf(max(lr, 0.0), df=1))
        levels: tuple[SubgroupLevel, ...] = ()
        if uniq.size <= max_levels:
            lv = []
            for level in uniq:
                mask = x == level
                y1 = y[mask & (a == 1)]
                y0 = y[mask & (a == 0)]
                eff = float(np.mean(y1) - np.mean(y0)) if (len(y1) and len(y0)) else float("nan")
                lv.append(SubgroupLevel(level=float(level), n=int(mask.sum()), effect=eff))
            levels = tuple(lv)
        results.append(
            SubgroupResult(covariate=name, p_value=p, flagged=bool(p < alpha), levels=levels)
        )
    return results


def _rss(X: np.ndarray, y: np.ndarray) -> float:
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    return float(resid @ resid)
