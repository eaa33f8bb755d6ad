import numpy as np
from hypothesis import given, settings, strategies as st

from rcpolicy import simplex_lstsq

rng_seeds = st.integers(min_value=0, max_value=10_000)


def _risk(Z, y, w):
    return float(np.mean((y - Z @ w) ** 2))


def test_exact_candidate_recovery():
    rng = np.random.default_rng(0)
    y = rng.normal(size=50)
    Z = np.column_stack([y, rng.normal(size=50)])
    w = simplex_lstsq(Z, y)
    assert w[0] > 0.999
    assert abs(w.sum() - 1.0) <= 1e-10


def test_duplicate_candidates_are_harmless():
    rng = np.random.default_rng(1)
    z = rng.normal(size=40)
    Z = np.column_stack([z, z, z])
    y = z + rng.normal(scale=0.1, size=40)
    w = simplex_lstsq(Z, y)
    assert np.all(w >= -1e-12)
    assert abs(w.sum() - 1.0) <= 1e-10


@settings(deadline=None, max_examples=60)
@given(seed=rng_seeds, k=st.integers(min_value=1, max_value=6))
def test_simplex_constraints_and_vertex_dominance(seed, k):
    """Weights live on the simplex and beat every single candidate."""
    rng = np.random.default_rng(seed)
    n = 60
    Z = rng.normal(size=(n, k))
    y = rng.normal(size=n)
    w = simplex_lstsq(Z, y)
    assert w.shape == (k,)
    assert np.all(w >= -1e-12)
    assert abs(w.sum() - 1.0) <= 1e-10
    ens = _risk(Z, y, w)
    for j in range(k):
        vertex = np.zeros(k)
        vertex[j] = 1.0
        assert ens <= _risk(Z, y, vertex) + 1e-10
