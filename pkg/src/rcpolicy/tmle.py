"""Targeted maximum likelihood estimation of policy values.

The estimand is the mean outcome had treatment been assigned by a
(possibly stochastic) rule d(W). Estimation is doubly robust: an initial
outcome regression is fluctuated along a least-favorable submodel so the
efficient-influence-function score is (numerically) solved, then the
value is the plug-in mean of the fluctuated regression under the rule.

Two routes share one core:

  tmle_value      single-sample TMLE with nuisances fit (or supplied) on
                  the full data and the rule taken as given.
  cv_tmle_value   cross-validated TMLE: nuisances and the rule are fit
                  per fold on training data, applied to the held-out
                  fold, and one pooled fluctuation targets the estimate.

For budget-constrained rules the influence function carries an extra
tau * (d(W) - kappa) term reflecting that the threshold itself was
chosen to spend the budget exactly.

All reported numbers (value, CI, influence values, thresholds) are on
the outcome's original scale; internally everything runs on [0, 1].
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig
from .data import Dataset, scale_outcome
from .glm import expit, logit
from .learners import (
    BlipModel,
    OutcomeModel,
    PropensityModel,
    fit_blip,
    fit_outcome,
    fit_propensity,
    stratified_folds,
)
from .rule import solve_threshold

__all__ = [
    "Assignment",
    "ContrastResult",
    "CvNuisance",
    "GridResult",
    "ValueEstimate",
    "assignment_for",
    "contrast",
    "contrast_estimates",
    "cv_tmle_value",
    "derive_seed",
    "evaluate_grid",
    "fit_folds",
    "tmle_value",
    "value_from_assignment",
]

FLUCT_TOL = 1e-10  # normalized score target for the fluctuation
FLUCT_MAX_ITER = 100
SCORE_WARN = 1e-8  # post-fluctuation score above this is flagged

_Q_STREAM = 11
_BLIP_STREAM = 12
_FOLDS_STREAM = 13


def derive_seed(*parts: int) -> int:
    """Deterministic child seed from integer parts (order matters)."""
    return int(np.random.SeedSequence(tuple(int(p) for p in parts)).generate_state(1)[0])


# ---------------------------------------------------------------------------
# fluctuation


def _fluctuate(offset: np.ndarray, h: np.ndarray, y: np.ndarray):
    """Intercept-only weighted logistic fluctuation on a fixed offset.

    Solves sum_i h_i (y_i - expit(offset_i + eps)) = 0 for eps by Newton
    steps. Returns (eps, score, warning) with score = |mean residual|.
    """
    n = len(y)
    if np.all(h <= 0.0):
        p = expit(offset)
        return 0.0, float(abs(h @ (y - p)) / n), "fluctuation skipped: all clever-covariate weights are zero"
    eps = 0.0
    warning = None
    score = np.inf
    for _ in range(FLUCT_MAX_ITER):
        p = expit(offset + eps)
        u = float(h @ (y - p)) / n
        score = abs(u)
        if score <= FLUCT_TOL:
            break
        d = -float(h @ (p * (1.0 - p))) / n
        if not np.isfinite(d) or d > -1e-300:
            warning = "fluctuation stalled: flat score derivative"
            break
        step = -u / d
        eps += float(np.clip(step, -10.0, 10.0))
    if score > SCORE_WARN and warning is None:
        warning = f"fluctuation score {score:.3e} above {SCORE_WARN:.0e}"
    return float(eps), float(score), warning


# ---------------------------------------------------------------------------
# results


@dataclass(frozen=True)
class ValueEstimate:
    """Policy value with influence-function inference, original units.

    components holds the influence function's four addends, satisfying
    eif = residual + plugin - centering - penalty row by row. score is
    the normalized fluctuation score on the [0, 1] outcome scale.
    """

    label: str
    psi: float
    se: float
    ci: tuple[float, float]
    n: int
    kappa: float | None
    tau: float
    pct_treated: float
    pct_stochastic: float
    epsilon: float
    score: float
    cv: bool
    fold_taus: tuple[float, ...]
    eif: np.ndarray = field(repr=False)
    components: dict = field(repr=False)
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class ContrastResult:
    """Difference of two policy values with paired influence inference."""

    label_a: str
    label_b: str
    psi_a: float
    psi_b: float
    diff: float
    se: float
    ci: tuple[float, float]


def contrast_estimates(a: ValueEstimate, b: ValueEstimate, z: float | None = None) -> ContrastResult:
    """a minus b, with the variance of the differenced influence function.

    Both estimates must come from the same sample (row-aligned influence
    values). Contrasting an estimate with itself gives 0 with CI (0, 0).
    """
    from .config import Z_975

    if a.n != b.n:
        raise ValueError("contrast needs estimates from the same sample")
    z = Z_975 if z is None else z
    d = a.eif - b.eif
    diff = a.psi - b.psi
    se = float(np.sqrt(np.mean(d * d) / a.n))
    return ContrastResult(
        label_a=a.label,
        label_b=b.label,
        psi_a=a.psi,
        psi_b=b.psi,
        diff=diff,
        se=se,
        ci=(diff - z * se, diff + z * se),
    )


def contrast(
    ds: Dataset,
    kappa: float,
    comparator,
    config: PipelineConfig | None = None,
    nuisance: CvNuisance | None = None,
) -> ContrastResult:
    """Value difference between the kappa-constrained rule and a comparator.

    comparator is "treat_all", "treat_none", or another kappa. Both
    values ride on the same fold fits so the influence functions pair
    row by row.
    """
    from .rule import StaticPolicy

    cfg = config or PipelineConfig()
    if nuisance is None:
        nuisance = fit_folds(ds, cfg)
    est = value_from_assignment(nuisance, assignment_for(nuisance, kappa))
    if comparator == "treat_all":
        target = StaticPolicy(1)
    elif comparator == "treat_none":
        target = StaticPolicy(0)
    elif isinstance(comparator, (int, float, np.floating)):
        target = float(comparator)
    else:
        raise ValueError("comparator must be 'treat_all', 'treat_none', or a kappa")
    other = value_from_assignment(nuisance, assignment_for(nuisance, target))
    return contrast_estimates(est, other, cfg.z_value)


# ---------------------------------------------------------------------------
# cross-validated nuisance fits


@dataclass(frozen=True)
class CvNuisance:
    """Per-fold nuisance fits scattered back to original row order.

    q0/q1/g1/val_blip[i] come from the fold whose validation set holds
    row i. train_blips[v] are fold v's blip predictions on its own
    training rows, the distribution the per-fold threshold is solved on.
    """

    ds: Dataset  # scaled copy of the analysis data
    scale: tuple[float, float]
    fold_id: np.ndarray
    q0: np.ndarray
    q1: np.ndarray
    g1: np.ndarray
    val_blip: np.ndarray
    train_blips: tuple[np.ndarray, ...]
    config: PipelineConfig
    warnings: tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return self.ds.n

    @property
    def folds(self) -> int:
        return len(self.train_blips)


def fit_folds(
    ds: Dataset, config: PipelineConfig | None = None, fold_id: np.ndarray | None = None
) -> CvNuisance:
    """Fit outcome, propensity, and blip nuisances per CV fold.

    fold_id can be supplied to reuse an existing split (the cost side of
    a cost-effectiveness analysis must share folds with the outcome
    side); otherwise folds are seeded and stratified by arm. With
    config.shared_blip one blip model is fit on the full data and reused
    across folds; thresholds are still solved per fold on training rows.
    """
    cfg = config or PipelineConfig()
    raw_bounds = ds.y_bounds if ds.y_scale is None else ds.y_scale
    ds = scale_outcome(ds)
    if fold_id is None:
        fold_id = stratified_folds(ds.a, cfg.folds, derive_seed(cfg.seed, _FOLDS_STREAM))
    else:
        fold_id = np.asarray(fold_id, dtype=int)
        if len(fold_id) != ds.n:
            raise ValueError("fold_id length does not match the dataset")
    fold_values = np.unique(fold_id)

    n = ds.n
    q0 = np.empty(n)
    q1 = np.empty(n)
    g1 = np.empty(n)
    val_blip = np.empty(n)
    train_blips: list[np.ndarray] = []
    warnings: list[str] = []

    shared_blip_model: BlipModel | None = None
    if cfg.shared_blip:
        q_full = fit_outcome(ds, cfg.outcome_library, cfg.folds, derive_seed(cfg.seed, _Q_STREAM, 9999))
        g_full = fit_propensity(ds, cfg.g_known, cfg.estimate_propensity, cfg.g_min)
        shared_blip_model = fit_blip(
            ds, q_full, g_full, cfg.blip_library, cfg.folds, derive_seed(cfg.seed, _BLIP_STREAM, 9999)
        )
        warnings.extend(f"shared blip: {w}" for w in (*q_full.warnings, *g_full.warnings, *shared_blip_model.warnings))

    for v in fold_values:
        val = fold_id == v
        train = ~val
        train_ds = ds.subset(train)
        if not train_ds.has_both_arms and cfg.estimate_propensity:
            raise ValueError(
                f"fold {v}: training split lost a treatment arm; use fewer folds"
            )
        q = fit_outcome(train_ds, cfg.outcome_library, cfg.folds, derive_seed(cfg.seed, _Q_STREAM, v))
        g = fit_propensity(train_ds, cfg.g_known, cfg.estimate_propensity, cfg.g_min)
        if cfg.shared_blip:
            blip = shared_blip_model
        else:
            blip = fit_blip(
                train_ds, q, g, cfg.blip_library, cfg.folds, derive_seed(cfg.seed, _BLIP_STREAM, v)
            )
        q0[val] = q.predict(0, ds.w[val])
        q1[val] = q.predict(1, ds.w[val])
        g1[val] = g.predict(ds.w[val])
        val_blip[val] = blip.predict(ds.w[val])
        train_blips.append(blip.predict(train_ds.w))
        for w_msg in (*q.warnings, *g.warnings, *(blip.warnings if not cfg.shared_blip else ())):
            warnings.append(f"fold {v}: {w_msg}")

    return CvNuisance(
        ds=ds,
        scale=raw_bounds,
        fold_id=fold_id,
        q0=q0,
        q1=q1,
        g1=g1,
        val_blip=val_blip,
        train_blips=tuple(train_blips),
        config=cfg,
        warnings=tuple(dict.fromkeys(warnings)),
    )


# ---------------------------------------------------------------------------
# policy assignment on the validation folds


@dataclass(frozen=True)
class Assignment:
    """Treatment probabilities a rule gives each row, plus bookkeeping.

    gtilde1[i] is the probability row i is treated. tau_row[i] is the
    threshold used for row i's fold (constant for fixed policies), on
    the scaled-blip axis; the penalty term of the influence function
    uses it row by row.
    """

    label: str
    kappa: float | None
    gtilde1: np.ndarray
    tau_row: np.ndarray
    fold_taus: tuple[float, ...]
    pct_treated: float
    pct_stochastic: float


def _static_label(policy) -> str:
    return "treat_all" if policy.kappa == 1.0 else "treat_none"


def assignment_for(nuis: CvNuisance, target) -> Assignment:
    """Resolve a target (budget kappa or policy object) to row assignments.

    A float target solves the constrained threshold per fold on that
    fold's training blips and applies it to the fold's held-out rows. A
    policy object (static arm or an already-fit rule) is applied as-is
    to every row; its threshold enters the penalty unchanged.
    """
    n = nuis.n
    if isinstance(target, (int, float, np.floating)):
        kappa = float(target)
        gtilde1 = np.empty(n)
        tau_row = np.empty(n)
        fold_taus = []
        for v, tb in zip(np.unique(nuis.fold_id), nuis.train_blips):
            val = nuis.fold_id == v
            sol = solve_threshold(tb, kappa)
            proto = _proto_policy(sol)
            gtilde1[val] = proto(nuis.val_blip[val])
            tau_row[val] = sol.tau
            fold_taus.append(sol.tau)
        label = f"kappa={kappa:g}"
    else:
        policy = target
        kappa = float(policy.kappa)
        gtilde1 = np.asarray(policy.assign(nuis.ds.w), dtype=float)
        tau_row = np.full(n, float(policy.tau))
        fold_taus = [float(policy.tau)] * nuis.folds
        label = _static_label(policy) if policy.__class__.__name__ == "StaticPolicy" else f"rule(kappa={kappa:g})"
    interior = (gtilde1 > 1e-12) & (gtilde1 < 1.0 - 1e-12)
    return Assignment(
        label=label,
        kappa=kappa,
        gtilde1=gtilde1,
        tau_row=tau_row,
        fold_taus=tuple(fold_taus),
        pct_treated=float(np.mean(gtilde1)),
        pct_stochastic=float(np.mean(interior)),
    )


def _proto_policy(sol):
    from .rule import _assign_from_blips

    return lambda blips: _assign_from_blips(np.asarray(blips, dtype=float), sol)


# ---------------------------------------------------------------------------
# the estimation core


def _estimate_core(
    *,
    y: np.ndarray,
    a: np.ndarray,
    q0: np.ndarray,
    q1: np.ndarray,
    g1: np.ndarray,
    asg: Assignment,
    scale: tuple[float, float],
    z: float,
    cv: bool,
    warnings: tuple[str, ...],
) -> ValueEstimate:
    n = len(y)
    lo, hi = scale
    s = hi - lo
    gt1 = asg.gtilde1
    h1 = gt1 / g1
    h0 = (1.0 - gt1) / (1.0 - g1)
    h_obs = np.where(a == 1, h1, h0)
    q_obs = np.where(a == 1, q1, q0)

    eps, score, fluct_warn = _fluctuate(logit(q_obs), h_obs, y)
    if fluct_warn is not None:
        warnings = (*warnings, fluct_warn)
    q1_star = expit(logit(q1) + eps)
    q0_star = expit(logit(q0) + eps)
    q_obs_star = np.where(a == 1, q1_star, q0_star)

    plugin_row = q1_star * gt1 + q0_star * (1.0 - gt1)
    psi_scaled = float(np.mean(plugin_row))
    pen_row = asg.tau_row * (gt1 - asg.kappa)

    psi = lo + s * psi_scaled
    residual = s * h_obs * (y - q_obs_star)
    plugin = lo + s * plugin_row
    centering = np.full(n, psi)
    penalty = s * pen_row
    eif = residual + plugin - centering - penalty
    se = float(np.sqrt(np.mean(eif * eif) / n))

    fold_taus = tuple(s * t for t in asg.fold_taus)
    return ValueEstimate(
        label=asg.label,
        psi=psi,
        se=se,
        ci=(psi - z * se, psi + z * se),
        n=n,
        kappa=asg.kappa,
        tau=s * float(np.mean(asg.tau_row)),
        pct_treated=asg.pct_treated,
        pct_stochastic=asg.pct_stochastic,
        epsilon=eps,
        score=score,
        cv=cv,
        fold_taus=fold_taus,
        eif=eif,
        components={
            "residual": residual,
            "plugin": plugin,
            "centering": centering,
            "penalty": penalty,
        },
        warnings=warnings,
    )


def value_from_assignment(nuis: CvNuisance, asg: Assignment) -> ValueEstimate:
    """Pooled fluctuation and plug-in value for a resolved assignment."""
    return _estimate_core(
        y=nuis.ds.y,
        a=nuis.ds.a,
        q0=nuis.q0,
        q1=nuis.q1,
        g1=nuis.g1,
        asg=asg,
        scale=nuis.scale,
        z=nuis.config.z_value,
        cv=True,
        warnings=nuis.warnings,
    )


# ---------------------------------------------------------------------------
# public entry points


def cv_tmle_value(
    ds: Dataset,
    target,
    config: PipelineConfig | None = None,
    nuisance: CvNuisance | None = None,
) -> ValueEstimate:
    """Cross-validated TMLE of a policy value.

    target is a budget kappa in [0, 1] (the constrained rule is then
    learned per fold) or a policy object applied as-is. Pass a
    pre-computed `nuisance` to amortize fits across many targets.
    """
    cfg = config or PipelineConfig()
    if nuisance is None:
        nuisance = fit_folds(ds, cfg)
    return value_from_assignment(nuisance, assignment_for(nuisance, target))


def tmle_value(
    ds: Dataset,
    policy,
    q: OutcomeModel | None = None,
    g: PropensityModel | None = None,
    config: PipelineConfig | None = None,
) -> ValueEstimate:
    """Single-sample TMLE of a given policy's value (no cross-fitting).

    Nuisances default to full-data fits; pass q and g to use external
    models (for instance oracle nuisances in simulations). The policy is
    taken as given: its threshold is not re-solved here.
    """
    cfg = config or PipelineConfig()
    raw_bounds = ds.y_bounds if ds.y_scale is None else ds.y_scale
    ds = scale_outcome(ds)
    warnings: tuple[str, ...] = ()
    if q is None:
        q = fit_outcome(ds, cfg.outcome_library, cfg.folds, derive_seed(cfg.seed, _Q_STREAM))
        warnings = (*warnings, *q.warnings)
    if g is None:
        g = fit_propensity(ds, cfg.g_known, cfg.estimate_propensity, cfg.g_min)
        warnings = (*warnings, *g.warnings)

    gtilde1 = np.asarray(policy.assign(ds.w), dtype=float)
    interior = (gtilde1 > 1e-12) & (gtilde1 < 1.0 - 1e-12)
    kappa = float(policy.kappa)
    label = _static_label(policy) if policy.__class__.__name__ == "StaticPolicy" else f"rule(kappa={kappa:g})"
    asg = Assignment(
        label=label,
        kappa=kappa,
        gtilde1=gtilde1,
        tau_row=np.full(ds.n, float(policy.tau)),
        fold_taus=(float(policy.tau),),
        pct_treated=float(np.mean(gtilde1)),
        pct_stochastic=float(np.mean(interior)),
    )
    return _estimate_core(
        y=ds.y,
        a=ds.a,
        q0=q.predict(0, ds.w),
        q1=q.predict(1, ds.w),
        g1=g.predict(ds.w),
        asg=asg,
        scale=raw_bounds,
        z=cfg.z_value,
        cv=False,
        warnings=warnings,
    )


@dataclass(frozen=True)
class GridResult:
    """Value estimates along a budget grid plus the static references."""

    kappas: tuple[float, ...]
    estimates: tuple[ValueEstimate, ...]
    treat_all: ValueEstimate
    treat_none: ValueEstimate
    nuisance: CvNuisance = field(repr=False)

    def estimate_at(self, kappa: float) -> ValueEstimate:
        for k, est in zip(self.kappas, self.estimates):
            if abs(k - kappa) <= 1e-12:
                return est
        raise KeyError(f"kappa {kappa} not on the grid")


def evaluate_grid(
    ds: Dataset,
    kappas,
    config: PipelineConfig | None = None,
    nuisance: CvNuisance | None = None,
) -> GridResult:
    """CV-TMLE values along a budget grid, sharing one set of fold fits.

    The static treat-all / treat-none values ride along on the same
    nuisances, so grid-vs-static contrasts difference paired influence
    functions.
    """
    from .rule import StaticPolicy

    cfg = config or PipelineConfig()
    kappas = tuple(float(k) for k in kappas)
    for k in kappas:
        if not (0.0 <= k <= 1.0):
            raise ValueError("kappa grid values must lie in [0, 1]")
    if nuisance is None:
        nuisance = fit_folds(ds, cfg)
    estimates = tuple(
        value_from_assignment(nuisance, assignment_for(nuisance, k)) for k in kappas
    )
    treat_all = value_from_assignment(nuisance, assignment_for(nuisance, StaticPolicy(1)))
    treat_none = value_from_assignment(nuisance, assignment_for(nuisance, StaticPolicy(0)))
    return GridResult(
        kappas=kappas,
        estimates=estimates,
        treat_all=treat_all,
        treat_none=treat_none,
        nuisance=nuisance,
    )
