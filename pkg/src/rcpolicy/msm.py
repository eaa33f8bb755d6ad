"""Working linear summary of the constraint-response curve.

The curve kappa -> value is summarized by an unweighted least-squares
line m(kappa) = beta0 + beta1*kappa over a grid of budgets. The line is
compared against the random-allocation chord, the segment from the
treat-none value to the treat-all value: if treatment effects do not
vary across people, targeting cannot beat randomly spending the same
budget, and the curve coincides with the chord. The (intercept, slope)
differences between line and chord are therefore a falsification check
on whether prioritization adds value.

Inference for the coefficients and the chord contrasts is by the
nonparametric bootstrap with percentile (2.5%, 97.5%) intervals. Two
modes: `refit` re-runs the whole pipeline (rule included) on every
resample; `fixed-rule` holds the full-data rule fixed and only
re-estimates values.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig
from .data import Dataset, scale_outcome
from .learners import fit_blip, fit_outcome, fit_propensity
from .rule import StaticPolicy, build_policy
from .tmle import GridResult, derive_seed, evaluate_grid, tmle_value

__all__ = ["MsmFit", "fit_msm", "msm_with_bootstrap"]

_RESAMPLE_STREAM = 211
_PIPELINE_STREAM = 212
_FULLFIT_STREAM = 213
MAX_REDRAWS = 10

BOOT_KEYS = ("beta0", "beta1", "contrast0", "contrast1")


@dataclass(frozen=True)
class MsmFit:
    """OLS line through (kappa, value) points, optionally with chord.

    chord is (treat-none value, treat-all minus treat-none); contrast is
    (beta0 - chord intercept, beta1 - chord slope). boot_ci maps each of
    beta0/beta1/contrast0/contrast1 to its percentile interval when a
    bootstrap was run.
    """

    kappas: tuple[float, ...]
    values: tuple[float, ...]
    beta0: float
    beta1: float
    chord: tuple[float, float] | None = None
    contrast: tuple[float, float] | None = None
    boot_ci: dict | None = None
    boot_mode: str | None = None
    boot_replicates: int = 0
    boot_redraws: int = 0
    boot_draws: dict | None = field(default=None, repr=False)

    def predict(self, kappa) -> np.ndarray:
        return self.beta0 + self.beta1 * np.asarray(kappa, dtype=float)

    def chord_at(self, kappa) -> np.ndarray:
        if self.chord is None:
            raise ValueError("no chord recorded on this fit")
        c0, c1 = self.chord
        return c0 + c1 * np.asarray(kappa, dtype=float)

    @property
    def fitted(self) -> tuple[float, ...]:
        return tuple(float(v) for v in self.predict(np.array(self.kappas)))

    @property
    def residuals(self) -> tuple[float, ...]:
        return tuple(v - f for v, f in zip(self.values, self.fitted))

    def plot_rows(self) -> list[tuple[float, float, float, float | None]]:
        """(kappa, value, fitted, chord) rows for curve rendering."""
        chord = self.chord_at(np.array(self.kappas)) if self.chord is not None else None
        rows = []
        for i, (k, v, f) in enumerate(zip(self.kappas, self.values, self.fitted)):
            rows.append((k, v, f, float(chord[i]) if chord is not None else None))
        return rows


def fit_msm(pairs, chord: tuple[float, float] | None = None, weights=None) -> MsmFit:
    """OLS of values on budgets; unweighted unless weights are given.

    pairs is a sequence of (kappa, value). chord, when given, is
    (treat-none value, treat-all value); it is stored as (intercept,
    slope) and differenced against the fitted coefficients. weights,
    when given, fit the precision-weighted line instead (nonnegative,
    not all zero).
    """
    pairs = [(float(k), float(v)) for k, v in pairs]
    if len(pairs) < 2:
        raise ValueError("need at least 2 (kappa, value) points")
    kappas = np.array([k for k, _ in pairs])
    values = np.array([v for _, v in pairs])
    if not (np.all(np.isfinite(kappas)) and np.all(np.isfinite(values))):
        raise ValueError("non-finite (kappa, value) input")
    if np.all(kappas == kappas[0]):
        raise ValueError("all kappa values identical; the slope is undefined")
    X = np.column_stack([np.ones(len(kappas)), kappas])
    if weights is not None:
        wts = np.asarray(weights, dtype=float)
        if wts.shape != kappas.shape or np.any(wts < 0) or not np.any(wts > 0):
            raise ValueError("weights must be nonnegative, one per point, not all zero")
        sw = np.sqrt(wts)
        coef, *_ = np.linalg.lstsq(X * sw[:, None], values * sw, rcond=None)
    else:
        coef, *_ = np.linalg.lstsq(X, values, rcond=None)
    beta0, beta1 = float(coef[0]), float(coef[1])
    chord_coefs = None
    contrast = None
    if chord is not None:
        psi_none, psi_all = float(chord[0]), float(chord[1])
        chord_coefs = (psi_none, psi_all - psi_none)
        contrast = (beta0 - chord_coefs[0], beta1 - chord_coefs[1])
    return MsmFit(
        kappas=tuple(float(k) for k in kappas),
        values=tuple(float(v) for v in values),
        beta0=beta0,
        beta1=beta1,
        chord=chord_coefs,
        contrast=contrast,
    )


def _fit_from_grid(grid: GridResult) -> MsmFit:
    pairs = list(zip(grid.kappas, (e.psi for e in grid.estimates)))
    return fit_msm(pairs, chord=(grid.treat_none.psi, grid.treat_all.psi))


def _resample(ds: Dataset, rng: np.random.Generator) -> tuple[Dataset, int]:
    # bootstrap resamples must keep both arms; redraw a bounded number
    # of times, then give up loudly
    for attempt in range(MAX_REDRAWS):
        idx = rng.integers(0, ds.n, size=ds.n)
        sub = ds.subset(idx)
        if sub.has_both_arms:
            return sub, attempt
    raise RuntimeError(
        f"bootstrap resample produced single-arm data {MAX_REDRAWS} times in a row"
    )


def msm_with_bootstrap(
    ds: Dataset,
    kappa_grid,
    config: PipelineConfig | None = None,
    replicates: int | None = None,
    boot_config: PipelineConfig | None = None,
    grid: GridResult | None = None,
) -> MsmFit:
    """MSM point fit plus bootstrap intervals for line and chord contrast.

    The point fit comes from full-data CV-TMLE values (pass `grid` to
    reuse an existing evaluation). Each replicate resamples n rows with
    replacement and recomputes (beta0, beta1, contrast0, contrast1);
    percentile intervals land in boot_ci. boot_config, when given,
    replaces the pipeline settings inside replicates only (a cheaper
    library makes large replicate counts tractable); the mode and seed
    always come from `config`. Deterministic given the master seed.

    "refit" re-solves the rules on every resample; "fixed-rule" holds the
    full-data rules and is conditional on them, so when the blip ranking
    is mostly noise its replicate values keep the selection optimism of
    the chosen rule. Prefer refit for chord-contrast inference.
    """
    cfg = config or PipelineConfig()
    reps = cfg.bootstrap_replicates if replicates is None else int(replicates)
    if reps < 1:
        raise ValueError("replicates must be >= 1")
    mode = cfg.bootstrap_mode
    kappas = tuple(float(k) for k in kappa_grid)
    if grid is None:
        grid = evaluate_grid(ds, kappas, cfg)
    elif tuple(grid.kappas) != kappas:
        raise ValueError("supplied grid does not match kappa_grid")
    point = _fit_from_grid(grid)

    rep_cfg = boot_config or cfg
    draws = {key: np.empty(reps) for key in BOOT_KEYS}
    redraws = 0

    fixed = None
    if mode == "fixed-rule":
        # the held-fixed rule comes from the main pipeline settings; only
        # the per-replicate nuisance refits use the (possibly leaner)
        # boot_config
        fixed = _fixed_rule_policies(ds, kappas, cfg)

    for r in range(reps):
        rng = np.random.default_rng(derive_seed(cfg.seed, _RESAMPLE_STREAM, r))
        ds_b, extra = _resample(ds, rng)
        redraws += extra
        rep_seed = derive_seed(cfg.seed, _PIPELINE_STREAM, r)
        if mode == "refit":
            fit_b = _fit_from_grid(evaluate_grid(ds_b, kappas, rep_cfg.replace(seed=rep_seed)))
        else:
            fit_b = _fixed_rule_replicate(ds_b, kappas, fixed, rep_cfg.replace(seed=rep_seed))
        draws["beta0"][r] = fit_b.beta0
        draws["beta1"][r] = fit_b.beta1
        draws["contrast0"][r] = fit_b.contrast[0]
        draws["contrast1"][r] = fit_b.contrast[1]

    alpha = (1.0 - cfg.ci_level) / 2.0
    boot_ci = {
        key: tuple(float(q) for q in np.quantile(draws[key], [alpha, 1.0 - alpha]))
        for key in BOOT_KEYS
    }
    return MsmFit(
        kappas=point.kappas,
        values=point.values,
        beta0=point.beta0,
        beta1=point.beta1,
        chord=point.chord,
        contrast=point.contrast,
        boot_ci=boot_ci,
        boot_mode=mode,
        boot_replicates=reps,
        boot_redraws=redraws,
        boot_draws=draws,
    )


def _fixed_rule_policies(ds: Dataset, kappas, cfg: PipelineConfig):
    """Full-data blip fit and per-kappa policies, shared by all replicates."""
    ds_s = scale_outcome(ds)
    seed = derive_seed(cfg.seed, _FULLFIT_STREAM)
    q = fit_outcome(ds_s, cfg.outcome_library, cfg.folds, seed)
    g = fit_propensity(ds_s, cfg.g_known, cfg.estimate_propensity, cfg.g_min)
    blip = fit_blip(ds_s, q, g, cfg.blip_library, cfg.folds, seed)
    return {k: build_policy(blip, ds_s, k) for k in kappas}


def _fixed_rule_replicate(ds_b: Dataset, kappas, policies, cfg: PipelineConfig) -> MsmFit:
    """Re-estimate values on a resample while holding the rules fixed."""
    ds_s = scale_outcome(ds_b)
    q = fit_outcome(ds_s, cfg.outcome_library, cfg.folds, cfg.seed)
    g = fit_propensity(ds_s, cfg.g_known, cfg.estimate_propensity, cfg.g_min)
    values = [tmle_value(ds_b, policies[k], q=q, g=g, config=cfg).psi for k in kappas]
    psi_none = tmle_value(ds_b, StaticPolicy(0), q=q, g=g, config=cfg).psi
    psi_all = tmle_value(ds_b, StaticPolicy(1), q=q, g=g, config=cfg).psi
    return fit_msm(list(zip(kappas, values)), chord=(psi_none, psi_all))
