import pytest

from rcpolicy import PipelineConfig, adaptr_like, generate

# small library + known propensity: keeps Monte Carlo loops fast while
# exercising the full stacking/fluctuation path
LEAN = dict(
    outcome_library=("mean", "glm"),
    blip_library=("mean", "glm"),
    folds=5,
    g_known=0.5,
)


@pytest.fixture(scope="session")
def lean_config():
    return PipelineConfig(**LEAN)


@pytest.fixture(scope="session")
def adaptr_2k():
    return generate(adaptr_like(seed=11), 2000)


@pytest.fixture(scope="session")
def adaptr_20k():
    return generate(adaptr_like(seed=7), 20000)
