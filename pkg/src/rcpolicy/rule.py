"""Resource-constrained rule construction from blip predictions.

Given predicted treatment effects (blips) and a budget kappa on the
fraction treated, the rule treats anyone whose blip clears a threshold
tau and randomizes on the tie set so the budget binds exactly:

    S(tau) = fraction of blips strictly greater than tau
    eta    = inf{tau : S(tau) <= kappa}        (-inf when never binding)
    tau    = max(eta, 0)

Treat with probability 1 if blip > tau, with probability
(kappa - S(tau)) / mass(blip = tau) if blip = tau and tau > 0, and
never otherwise; at tau = 0 the rule is the unconstrained one,
treat exactly when blip > 0.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "StaticPolicy",
    "RulePolicy",
    "ThresholdSolution",
    "blip_atoms",
    "build_policy",
    "solve_threshold",
    "survival",
]

TIE_TOL = 1e-9  # blip values within this distance form one atom


def survival(blips: Sequence[float], tau: float) -> float:
    """Fraction of blips strictly greater than tau."""
    b = np.asarray(blips, dtype=float)
    if b.size == 0:
        raise ValueError("empty blip list")
    if not np.all(np.isfinite(b)):
        raise ValueError("non-finite blip values")
    return float(np.mean(b > tau))


@dataclass(frozen=True)
class ThresholdSolution:
    """Threshold and tie-randomization solving the budget constraint."""

    kappa: float
    eta: float  # may be -inf
    tau: float
    s_at_tau: float
    tie_mass: float
    tie_prob: float

    @property
    def expected_treated(self) -> float:
        return self.s_at_tau + self.tie_prob * self.tie_mass


def _group_atoms(
    blips: np.ndarray, masses: np.ndarray | None
) -> tuple[np.ndarray, np.ndarray]:
    """Distinct blip values with probability masses, grouped at TIE_TOL."""
    b = np.asarray(blips, dtype=float)
    if b.size == 0:
        raise ValueError("empty blip list")
    if not np.all(np.isfinite(b)):
        raise ValueError("non-finite blip values")
    if masses is None:
        m = np.full(b.size, 1.0 / b.size)
    else:
        m = np.asarray(masses, dtype=float)
        if m.shape != b.shape:
            raise ValueError("masses must align with blips")
        if np.any(m < 0) or m.sum() <= 0:
            raise ValueError("masses must be nonnegative with positive total")
        m = m / m.sum()
    order = np.argsort(b, kind="stable")
    b, m = b[order], m[order]
    values: list[float] = []
    weights: list[float] = []
    for v, p in zip(b, m):
        # merge by distance to the atom's representative value so every
        # atom has diameter <= TIE_TOL and the later |b - tau| <= TIE_TOL
        # membership test agrees with the grouping
        if values and v - values[-1] <= TIE_TOL:
            weights[-1] += p
        else:
            values.append(float(v))
            weights.append(float(p))
    return np.array(values), np.array(weights)


def solve_threshold(
    blips: Sequence[float],
    kappa: float,
    masses: Sequence[float] | None = None,
) -> ThresholdSolution:
    """Solve for the constrained rule's threshold on a blip distribution.

    blips may be raw per-row predictions (each carrying weight 1/n) or,
    with `masses`, the atoms of a discrete distribution.
    """
    if not (0.0 <= kappa <= 1.0):
        raise ValueError("kappa must lie in [0, 1]")
    values, weights = _group_atoms(
        np.asarray(blips, dtype=float), None if masses is None else np.asarray(masses)
    )
    # tail mass strictly above each atom; S is right-continuous, so the
    # infimum is attained at an atom (or never binds and eta = -inf)
    tail_above = np.concatenate([np.cumsum(weights[::-1])[::-1][1:], [0.0]])
    total = float(weights.sum())  # 1 after normalization, up to summation dust
    if kappa >= total - 1e-12:
        eta = float("-inf")
    else:
        j = int(np.argmax(tail_above <= kappa))  # first atom whose strict tail fits
        eta = float(values[j])
    tau = max(eta, 0.0)

    # strict exceedance; at tau = 0 the unconstrained rule's strict B > 0
    # applies with no tie tolerance, so that any positive blip is treated
    above = values > (tau + TIE_TOL if tau > 0.0 else 0.0)
    at = np.abs(values - tau) <= TIE_TOL
    s_at_tau = float(weights[above].sum())
    tie_mass = float(weights[at].sum())
    if tau > 0.0 and tie_mass > 0.0:
        tie_prob = (kappa - s_at_tau) / tie_mass
        tie_prob = float(min(max(tie_prob, 0.0), 1.0))
    else:
        tie_prob = 0.0  # deterministic branch: ties at tau are untreated
    return ThresholdSolution(
        kappa=float(kappa),
        eta=eta,
        tau=float(tau),
        s_at_tau=s_at_tau,
        tie_mass=tie_mass,
        tie_prob=tie_prob,
    )


def blip_atoms(blips: Sequence[float]) -> list[tuple[float, int]]:
    """Distinct predicted-blip values with row counts, grouped at TIE_TOL.

    The atoms of the empirical blip distribution, as used for tie
    handling; suitable for histogram-style summaries of a fitted rule.
    """
    b = np.asarray(blips, dtype=float)
    values, weights = _group_atoms(b, None)
    counts = np.rint(weights * b.size).astype(int)
    return [(float(v), int(c)) for v, c in zip(values, counts)]


def _assign_from_blips(b: np.ndarray, sol: ThresholdSolution) -> np.ndarray:
    out = np.zeros(len(b))
    if sol.tau > 0.0:
        out[b > sol.tau + TIE_TOL] = 1.0
        if sol.tie_prob > 0.0:
            out[np.abs(b - sol.tau) <= TIE_TOL] = sol.tie_prob
    else:
        out[b > 0.0] = 1.0  # unconstrained rule: treat positive blips
    return out


@dataclass(frozen=True)
class RulePolicy:
    """Stochastic treatment rule induced by a blip model and a budget.

    assign maps covariate rows to treatment probabilities. kind is
    "stochastic" when the tie set receives a probability strictly inside
    (0, 1), else "deterministic". pct_treated and pct_stochastic describe
    the sample the threshold was solved on.
    """

    threshold: ThresholdSolution
    blip_predict: Callable[[np.ndarray], np.ndarray]
    pct_treated: float
    pct_stochastic: float

    @property
    def kappa(self) -> float:
        return self.threshold.kappa

    @property
    def tau(self) -> float:
        return self.threshold.tau

    @property
    def kind(self) -> str:
        t = self.threshold
        return "stochastic" if (t.tau > 0 and t.tie_mass > 0 and 0 < t.tie_prob < 1) else "deterministic"

    def assign(self, w: np.ndarray) -> np.ndarray:
        b = np.asarray(self.blip_predict(np.atleast_2d(w)), dtype=float)
        return self.assign_from_blips(b)

    def assign_from_blips(self, blips: np.ndarray) -> np.ndarray:
        return _assign_from_blips(np.asarray(blips, dtype=float), self.threshold)


@dataclass(frozen=True)
class StaticPolicy:
    """Treat-all (arm=1) or treat-none (arm=0), independent of covariates.

    Exposes the same surface as RulePolicy so value estimation runs both
    through one code path. tau is 0 and kappa is the arm itself, which
    makes the influence-function penalty term vanish identically.
    """

    arm: int

    def __post_init__(self):
        if self.arm not in (0, 1):
            raise ValueError("arm must be 0 or 1")

    @property
    def kappa(self) -> float:
        return float(self.arm)

    @property
    def tau(self) -> float:
        return 0.0

    @property
    def kind(self) -> str:
        return "deterministic"

    def assign(self, w: np.ndarray) -> np.ndarray:
        return np.full(np.atleast_2d(w).shape[0], float(self.arm))

    def assign_from_blips(self, blips: np.ndarray) -> np.ndarray:
        return np.full(len(blips), float(self.arm))


def build_policy(model, ds, kappa: float) -> RulePolicy:
    """Fit the constrained rule on a dataset's empirical blip distribution.

    model must expose predict(W) -> blips. The threshold is solved on the
    in-sample predictions; out-of-sample rows are assigned by comparing
    their predicted blip against the stored threshold.
    """
    if ds.n < 1:
        raise ValueError("empty dataset")
    blips = np.asarray(model.predict(ds.w), dtype=float)
    sol = solve_threshold(blips, kappa)
    assign = _assign_from_blips(blips, sol)
    interior = (assign > 1e-12) & (assign < 1 - 1e-12)
    return RulePolicy(
        threshold=sol,
        blip_predict=model.predict,
        pct_treated=float(np.mean(assign)),
        pct_stochastic=float(np.mean(interior)),
    )
