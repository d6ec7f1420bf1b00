import os
from pathlib import Path

import hypothesis
import numpy as np
import pytest

hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.register_profile("default", max_examples=40, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ROOT = Path(__file__).resolve().parent.parent
ADULT = ROOT / "data" / "adult.libsvm.gz"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def adult_path():
    if not ADULT.exists():
        pytest.skip(f"{ADULT} missing; run scripts/prepare_adult.py")
    return ADULT


def make_toy(n=40, dims=(3, 2), n_classes=2, seed=0, normalize=True):
    """Small linearly separable-ish vertical dataset."""
    from verfedsv.data import ClientData, VerticalDataset, normalize_client_features

    r = np.random.default_rng(seed)
    x = r.normal(size=(n, sum(dims)))
    w = r.normal(size=(sum(dims), n_classes))
    y = np.argmax(x @ w + 0.5 * r.normal(size=(n, n_classes)), axis=1)
    bounds = np.cumsum([0, *dims])
    clients = [ClientData(m, x[:, bounds[m]:bounds[m + 1]]) for m in range(len(dims))]
    if normalize:
        clients = [normalize_client_features(c) for c in clients]
    return VerticalDataset(tuple(clients), y, n_classes)


@pytest.fixture
def toy():
    return make_toy()
