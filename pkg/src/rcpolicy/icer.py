"""Incremental cost-effectiveness of a constrained rule vs a static rule.

Four policy values are estimated on the same sample with shared folds:
outcome under the policy, outcome under the comparator, and the same
pair with cost as the dependent variable (costs affinely scaled to
[0, 1] by their observed bounds and run through the identical
fluctuation machinery). The ICER is the cost difference over the
effectiveness difference; its influence function follows from the delta
method, IC = (IC_num - ratio * IC_den) / denominator, giving a Wald
interval. Denominators too close to zero are flagged unstable and the
ratio/interval suppressed: a cost ratio against a no-effect contrast
has no meaning.

For binary outcomes the denominator is reported in percentage points by
default so a ratio reads as currency per percentage point of response.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig
from .data import Dataset
from .rule import StaticPolicy
from .tmle import CvNuisance, ValueEstimate, assignment_for, fit_folds, value_from_assignment

__all__ = ["IcerEstimate", "IcerCurve", "icer", "icer_curve", "ratio"]

COMPARATORS = ("treat_none", "treat_all")


def ratio(numerator: float, denominator: float) -> float:
    """Plain cost-effectiveness ratio; NaN on a zero denominator."""
    if denominator == 0.0:
        return float("nan")
    return float(numerator) / float(denominator)


@dataclass(frozen=True)
class IcerEstimate:
    """One incremental cost-effectiveness comparison.

    numerator is the incremental cost in original currency units;
    denominator the incremental effectiveness (percentage points when
    effect_units == "pp"). components holds the four underlying value
    estimates keyed outcome_policy / outcome_comparator / cost_policy /
    cost_comparator. When unstable is True the denominator was within
    the epsilon guard of zero: ratio is NaN and se/ci are None.
    """

    kappa: float | None
    label: str
    comparator: str
    numerator: float
    denominator: float
    ratio: float
    se: float | None
    ci: tuple[float, float] | None
    unstable: bool
    effect_units: str
    n: int
    components: dict = field(repr=False)
    ic: np.ndarray | None = field(repr=False, default=None)


@dataclass(frozen=True)
class IcerCurve:
    """Per-budget ICER estimates against one static comparator."""

    comparator: str
    estimates: tuple[IcerEstimate, ...]

    def plane_points(self) -> list[tuple[float, float, float | None]]:
        """(denominator, numerator, kappa) triples for CE-plane plots."""
        return [(e.denominator, e.numerator, e.kappa) for e in self.estimates]


@dataclass(frozen=True)
class _IcerContext:
    """Shared fold fits and comparator assignment reused across budgets."""

    nuis_y: CvNuisance
    nuis_c: CvNuisance | None  # None when costs are constant
    cost_const: float | None
    comp_eff: ValueEstimate
    comp_cost: ValueEstimate | None
    comparator: str
    config: PipelineConfig


def _constant_cost_estimate(value: float, n: int, label: str) -> ValueEstimate:
    # constant observed costs make every policy's cost value that constant
    zeros = np.zeros(n)
    return ValueEstimate(
        label=label,
        psi=float(value),
        se=0.0,
        ci=(float(value), float(value)),
        n=n,
        kappa=None,
        tau=0.0,
        pct_treated=float("nan"),
        pct_stochastic=float("nan"),
        epsilon=0.0,
        score=0.0,
        cv=True,
        fold_taus=(),
        eif=zeros,
        components={"residual": zeros, "plugin": zeros, "centering": zeros, "penalty": zeros},
        warnings=("constant cost column: cost value is degenerate",),
    )


def _prepare(ds: Dataset, comparator: str, cfg: PipelineConfig) -> _IcerContext:
    if ds.c is None:
        raise ValueError("cost-effectiveness analysis needs a cost column")
    if comparator not in COMPARATORS:
        raise ValueError(f"comparator must be one of {COMPARATORS}")
    nuis_y = fit_folds(ds, cfg)
    lo_c, hi_c = float(np.min(ds.c)), float(np.max(ds.c))
    nuis_c = None
    cost_const = None
    if hi_c > lo_c:
        ds_cost = Dataset(
            w=ds.w,
            a=ds.a,
            y=ds.c,
            covariate_names=ds.covariate_names,
            outcome_kind="bounded_real",
            y_bounds=(lo_c, hi_c),
        )
        nuis_c = fit_folds(ds_cost, cfg, fold_id=nuis_y.fold_id)
    else:
        cost_const = lo_c
    comp_policy = StaticPolicy(1 if comparator == "treat_all" else 0)
    comp_asg = assignment_for(nuis_y, comp_policy)
    comp_eff = value_from_assignment(nuis_y, comp_asg)
    comp_cost = (
        value_from_assignment(nuis_c, comp_asg) if nuis_c is not None else None
    )
    return _IcerContext(
        nuis_y=nuis_y,
        nuis_c=nuis_c,
        cost_const=cost_const,
        comp_eff=comp_eff,
        comp_cost=comp_cost,
        comparator=comparator,
        config=cfg,
    )


def _estimate_one(ctx: _IcerContext, target) -> IcerEstimate:
    cfg = ctx.config
    asg = assignment_for(ctx.nuis_y, target)
    eff_pol = value_from_assignment(ctx.nuis_y, asg)
    if ctx.nuis_c is not None:
        cost_pol = value_from_assignment(ctx.nuis_c, asg)
        cost_comp = ctx.comp_cost
    else:
        n = ctx.nuis_y.n
        cost_pol = _constant_cost_estimate(ctx.cost_const, n, asg.label)
        cost_comp = _constant_cost_estimate(ctx.cost_const, n, ctx.comparator)

    numerator = cost_pol.psi - cost_comp.psi
    ic_num = cost_pol.eif - cost_comp.eif
    eff_diff = eff_pol.psi - ctx.comp_eff.psi
    ic_eff = eff_pol.eif - ctx.comp_eff.eif

    lo_y, hi_y = ctx.nuis_y.scale
    scaled_diff = eff_diff / (hi_y - lo_y)
    unstable = abs(scaled_diff) <= cfg.epsilon_den

    pp = ctx.nuis_y.ds.outcome_kind == "binary" and cfg.effect_units == "pp"
    denominator = 100.0 * eff_diff if pp else eff_diff
    ic_den = 100.0 * ic_eff if pp else ic_eff
    units = "pp" if pp else "outcome"

    components = {
        "outcome_policy": eff_pol,
        "outcome_comparator": ctx.comp_eff,
        "cost_policy": cost_pol,
        "cost_comparator": cost_comp,
    }
    n = ctx.nuis_y.n
    kappa = asg.kappa if asg.label.startswith(("kappa=", "rule(")) else None
    if unstable:
        return IcerEstimate(
            kappa=kappa,
            label=asg.label,
            comparator=ctx.comparator,
            numerator=numerator,
            denominator=denominator,
            ratio=float("nan"),
            se=None,
            ci=None,
            unstable=True,
            effect_units=units,
            n=n,
            components=components,
        )
    r = numerator / denominator
    ic = (ic_num - r * ic_den) / denominator
    se = float(np.std(ic) / np.sqrt(n))
    z = cfg.z_value
    return IcerEstimate(
        kappa=kappa,
        label=asg.label,
        comparator=ctx.comparator,
        numerator=numerator,
        denominator=denominator,
        ratio=float(r),
        se=se,
        ci=(float(r) - z * se, float(r) + z * se),
        unstable=False,
        effect_units=units,
        n=n,
        components=components,
        ic=ic,
    )


def icer(
    ds: Dataset,
    kappa: float,
    comparator: str = "treat_none",
    config: PipelineConfig | None = None,
) -> IcerEstimate:
    """ICER of the kappa-constrained rule against a static comparator."""
    cfg = config or PipelineConfig()
    ctx = _prepare(ds, comparator, cfg)
    return _estimate_one(ctx, float(kappa))


def icer_curve(
    ds: Dataset,
    kappa_grid,
    comparator: str = "treat_none",
    config: PipelineConfig | None = None,
) -> IcerCurve:
    """One ICER per budget, all sharing fold fits and the comparator arm.

    Unstable budgets (effectiveness difference inside the epsilon guard)
    are flagged on their entries, never fatal.
    """
    cfg = config or PipelineConfig()
    ctx = _prepare(ds, comparator, cfg)
    estimates = tuple(_estimate_one(ctx, float(k)) for k in kappa_grid)
    return IcerCurve(comparator=comparator, estimates=estimates)
