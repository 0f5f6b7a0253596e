import os
from dataclasses import replace

import numpy as np
import pytest

from scripts.config import ModelConfig
from scripts.data_collect import make_toy_table
from scripts.data_loader import fit_normalization


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: chay lau, chi chay khi HOPULAR_RUN_SLOW=1")


def pytest_collection_modifyitems(config, items):
    if os.getenv("HOPULAR_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="dat HOPULAR_RUN_SLOW=1 de chay")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_dataset():
    """Bảng 4 dòng, d=3, đã có thống kê chuẩn hóa trên toàn bộ dòng."""
    dataset = make_toy_table(seed=0)
    return replace(dataset, stats=fit_normalization(dataset, np.arange(dataset.n_rows)))


@pytest.fixture
def small_config():
    return ModelConfig(embedding_dim=4, n_blocks=1, n_heads=2, dropout=(0.0, 0.0, 0.0))
