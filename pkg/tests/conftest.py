"""
Pytest configuration for refiner tests
"""

from typing import List

import pytest

from src.app.data.coarse import coarse_predict_all
from src.app.data.generator import generate
from src.app.data.scenario import ModeSet, Scenario
from src.config.run_config import DataConfig, RefinerConfig, RunConfig, TrainConfig
from src.config.settings import reload_settings


@pytest.fixture(autouse=True)
def setup_test_environment(monkeypatch, tmp_path_factory):
    """Isolate every test from the caller's SBR_* environment"""
    log_dir = tmp_path_factory.mktemp("logs")
    test_vars = {
        "SBR_LOG_LEVEL": "WARNING",
        "SBR_LOG_FORMAT": "json",
        "SBR_LOG_FILE_PATH": str(log_dir / "sbr.log"),
        "SBR_CHECK_FINITE": "true",
        "SBR_THREADS": "1",
    }
    for key, value in test_vars.items():
        monkeypatch.setenv(key, value)
    monkeypatch.delenv("SBR_SEED", raising=False)
    monkeypatch.delenv("SBR_DEBUG", raising=False)
    reload_settings()
    yield
    reload_settings()


# ============================================================================
# Shared fixtures
# ============================================================================

@pytest.fixture
def small_dims() -> DataConfig:
    return DataConfig(
        history_len=5,
        future_len=10,
        sample_rate=10.0,
        agents_min=2,
        agents_max=3,
        modes=2,
    )


@pytest.fixture
def tiny_config(small_dims) -> RunConfig:
    """Refiner small enough for finite-difference checks and quick training"""
    return RunConfig(
        refiner=RefinerConfig(iterations=2, embed_dim=8, heads=2, lane_points=4, pe_bands=2),
        train=TrainConfig(epochs=2, batch_size=2, val_fraction=0.25, lr=1e-3),
        data=small_dims,
        seed=0,
    )


@pytest.fixture
def small_scenarios(small_dims) -> List[Scenario]:
    return generate(small_dims, count=4, seed=7)


@pytest.fixture
def small_modes(small_scenarios, small_dims) -> List[ModeSet]:
    return coarse_predict_all(small_scenarios, small_dims.modes, seed=7)
