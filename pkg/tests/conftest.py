import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

import segadapt as sa
from segadapt.training import ToyDataset


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(max(1, torch.get_num_threads()))
    yield


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory) -> ToyDataset:
    """A small but real two-domain dataset shared by training-level tests."""
    root = tmp_path_factory.mktemp("tinydata")
    sa.make_split(root, sa.SOURCE_SPEC, sa.TARGET_SPEC,
                  n_src=24, n_tgt=24, n_val_tgt=10, seed=77000, size=96)
    return ToyDataset.from_dir(root)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
