import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rcpolicy import (
    OracleBlipModel,
    StaticPolicy,
    adaptr_like,
    blip_atoms,
    build_policy,
    generate,
    solve_threshold,
    survival,
)
from rcpolicy.dgp import ADAPTR_BLIPS, ADAPTR_MASSES

MASSES = np.array(ADAPTR_MASSES)
BLIPS = np.array(ADAPTR_BLIPS)

# integer-count expansion of the mass function (masses sum to 0.9999,
# so 10000x the masses are exact integer counts)
EXPANDED = np.repeat(BLIPS, (MASSES * 10000).round().astype(int))


# --- survival ----------------------------------------------------------------


def test_survival_direct_count():
    assert survival((0.1, 0.2, 0.3), 0.15) == pytest.approx(2 / 3, abs=1e-15)


def test_survival_population_masses():
    # tail above 0.07 is 7829/9999 after renormalization
    assert survival(EXPANDED, 0.07) == pytest.approx(0.782978297829783, abs=1e-12)
    assert round(survival(EXPANDED, 0.07), 3) == 0.783


def test_survival_above_max_is_zero():
    assert survival((0.1, 0.2, 0.3), 0.3) == 0.0
    assert survival((0.1, 0.2, 0.3), 5.0) == 0.0


def test_survival_rejects_degenerate_input():
    with pytest.raises(ValueError):
        survival((), 0.1)
    with pytest.raises(ValueError):
        survival((0.1, np.nan), 0.1)


# --- threshold solving -------------------------------------------------------


def test_solve_threshold_budget_090():
    sol = solve_threshold(BLIPS, 0.9, masses=MASSES)
    assert sol.tau == pytest.approx(0.07, abs=1e-12)
    assert sol.eta == pytest.approx(0.07, abs=1e-12)
    assert sol.s_at_tau == pytest.approx(0.782978297829783, abs=1e-12)
    assert sol.tie_prob == pytest.approx(0.539217, abs=1e-6)
    assert sol.expected_treated == pytest.approx(0.9, abs=1e-12)


def test_solve_threshold_budget_050():
    sol = solve_threshold(BLIPS, 0.5, masses=MASSES)
    assert sol.tau == pytest.approx(0.08, abs=1e-12)
    assert sol.s_at_tau == pytest.approx(0.438944, abs=1e-6)
    assert sol.tie_prob == pytest.approx(0.177471, abs=1e-6)
    assert sol.expected_treated == pytest.approx(0.5, abs=1e-12)


def test_solve_threshold_masses_match_expanded_rows():
    for kappa in (0.1, 0.3, 0.5, 0.7, 0.9):
        a = solve_threshold(BLIPS, kappa, masses=MASSES)
        b = solve_threshold(EXPANDED, kappa)
        assert a.tau == b.tau
        assert a.s_at_tau == pytest.approx(b.s_at_tau, abs=1e-12)
        assert a.tie_prob == pytest.approx(b.tie_prob, abs=1e-12)


def test_solve_threshold_nonbinding_budget():
    sol = solve_threshold((0.2, 0.3, 0.4), 1.0)
    assert sol.eta == float("-inf")
    assert sol.tau == 0.0
    # unconstrained rule treats every positive blip
    assert sol.s_at_tau == pytest.approx(1.0, abs=1e-12)


def test_solve_threshold_zero_budget():
    sol = solve_threshold((0.2, 0.3, 0.4), 0.0)
    assert sol.tau == pytest.approx(0.4, abs=1e-15)
    assert sol.tie_prob == 0.0
    assert sol.expected_treated == pytest.approx(0.0, abs=1e-12)


def test_solve_threshold_rejects_bad_kappa():
    for kappa in (-0.1, 1.1, np.nan):
        with pytest.raises(ValueError):
            solve_threshold((0.1, 0.2), kappa)


def test_solve_threshold_tie_tolerance_groups_atoms():
    # values 5e-10 apart are one atom
    sol = solve_threshold((0.1, 0.1 + 5e-10, 0.2, 0.3), 0.5)
    assert sol.tie_mass == pytest.approx(0.5, abs=1e-12)
    assert sol.tau == pytest.approx(0.1, abs=1e-9)


def test_blip_atoms_counts_and_order():
    atoms = blip_atoms([0.3, 0.1, 0.1 + 2e-10, 0.2, 0.3])
    values = [v for v, _ in atoms]
    counts = [c for _, c in atoms]
    assert values == sorted(values)
    assert sum(counts) == 5
    assert counts[0] == 2  # the two near-equal values merged


# --- policy construction -----------------------------------------------------


def test_build_policy_zero_budget_treats_nobody():
    spec = adaptr_like(seed=5)
    ds = generate(spec, 3000)
    pol = build_policy(OracleBlipModel(spec), ds, 0.0)
    assert pol.tau == pytest.approx(float(np.max(BLIPS)), abs=1e-12)
    assert pol.threshold.tie_prob == 0.0
    assert np.all(pol.assign(ds.w) == 0.0)
    assert pol.pct_treated == 0.0


def test_build_policy_binding_budget_treats_kappa():
    spec = adaptr_like(seed=5)
    ds = generate(spec, 3000)
    pol = build_policy(OracleBlipModel(spec), ds, 0.3)
    assert abs(np.mean(pol.assign(ds.w)) - 0.3) <= 1.0 / ds.n
    assert pol.pct_treated == pytest.approx(float(np.mean(pol.assign(ds.w))), abs=1e-15)


def test_build_policy_some_budget_is_stochastic():
    spec = adaptr_like(seed=5)
    ds = generate(spec, 3000)
    kinds = []
    stoch = []
    for kappa in np.arange(0.1, 1.0, 0.1):
        pol = build_policy(OracleBlipModel(spec), ds, float(kappa))
        kinds.append(pol.kind)
        stoch.append(pol.pct_stochastic)
    assert any(k == "stochastic" for k in kinds)
    assert any(0.0 < s < 1.0 for s in stoch)


def test_build_policy_kappa_one_is_unconstrained():
    spec = adaptr_like(seed=5)
    ds = generate(spec, 500)
    pol = build_policy(OracleBlipModel(spec), ds, 1.0)
    assert pol.threshold.eta == float("-inf")
    assert pol.tau == 0.0
    # all oracle blips positive, so everyone is treated
    assert np.all(pol.assign(ds.w) == 1.0)


def test_build_policy_empty_dataset_errors():
    # empty data is rejected at Dataset construction, upstream of the rule
    spec = adaptr_like(seed=5)
    ds = generate(spec, 10)
    with pytest.raises(ValueError):
        build_policy(OracleBlipModel(spec), ds.subset(np.array([], dtype=int)), 0.5)


def test_static_policies():
    w = np.zeros((7, 2))
    assert np.all(StaticPolicy(arm=1).assign(w) == 1.0)
    assert np.all(StaticPolicy(arm=0).assign(w) == 0.0)
    assert StaticPolicy(arm=1).kappa == 1.0
    with pytest.raises(ValueError):
        StaticPolicy(arm=2)


# --- distribution-free properties --------------------------------------------

blip_lists = st.lists(
    st.floats(min_value=-1.0, max_value=1.0, allow_nan=False, width=32),
    min_size=1,
    max_size=60,
)


@settings(max_examples=200, deadline=None)
@given(blips=blip_lists, kappa=st.floats(min_value=0.0, max_value=1.0))
def test_threshold_feasibility_property(blips, kappa):
    sol = solve_threshold(blips, kappa)
    assert sol.tau == max(sol.eta, 0.0)
    assert 0.0 <= sol.tie_prob <= 1.0
    assert sol.s_at_tau <= kappa + 1e-12
    expected = sol.expected_treated
    assert expected <= kappa + 1e-12
    if sol.tau > 0.0 and sol.tie_mass > 0.0:
        positive_mass = np.mean(np.asarray(blips) > 0)
        assert abs(expected - min(kappa, positive_mass)) <= 1e-9


@settings(max_examples=100, deadline=None)
@given(blips=blip_lists)
def test_threshold_monotone_in_kappa_property(blips):
    kappas = np.linspace(0.0, 1.0, 11)
    sols = [solve_threshold(blips, float(k)) for k in kappas]
    taus = [s.tau for s in sols]
    expected = [s.expected_treated for s in sols]
    assert all(a >= b - 1e-12 for a, b in zip(taus, taus[1:]))
    assert all(a <= b + 1e-12 for a, b in zip(expected, expected[1:]))


@settings(max_examples=100, deadline=None)
@given(blips=blip_lists, kappa=st.floats(min_value=0.0, max_value=1.0))
def test_assignment_respects_threshold_property(blips, kappa):
    sol = solve_threshold(blips, kappa)
    b = np.asarray(blips, dtype=float)
    from rcpolicy.rule import _assign_from_blips

    assign = _assign_from_blips(b, sol)
    assert np.all((assign >= 0.0) & (assign <= 1.0))
    if sol.tau > 0.0:
        assert np.all(assign[b > sol.tau + 1e-9] == 1.0)
        assert np.all(assign[b < sol.tau - 1e-9] == 0.0)
    else:
        assert np.all(assign[b > 1e-9] == 1.0)
        assert np.all(assign[b <= 0.0] == 0.0)
    assert np.mean(assign) <= kappa + 1.0 / len(b) + 1e-12
