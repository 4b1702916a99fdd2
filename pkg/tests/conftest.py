import pytest

from hstconformal import PipelineSettings, generate_synthetic


@pytest.fixture(scope="session")
def small_triple():
    """6-circuit / 3-substation panel reused by pipeline-level tests."""
    return generate_synthetic(6, 3, 80, seed=21)


@pytest.fixture(scope="session")
def fast_settings():
    # fewer epochs than the production default; conformal validity does not
    # depend on fit quality, so tests trade accuracy for speed
    return PipelineSettings(epochs=120)
