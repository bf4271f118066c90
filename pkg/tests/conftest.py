import numpy as np
import pytest
from hypothesis import settings

from lagdose.simulation import DgpConfig, generate_panel

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_panel():
    """A reference-design panel small enough for per-test fits."""
    return generate_panel(DgpConfig(n=80, T=12, seed=3))


@pytest.fixture(scope="session")
def sim_panel():
    return generate_panel(DgpConfig(n=400, T=50, seed=11))


def make_panel(X, A, Y, names=("x",), **kw):
    from lagdose.panel import TrajectoryPanel

    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[..., None]
    return TrajectoryPanel(X, np.asarray(A, float), np.asarray(Y, float), covariate_names=names, **kw)
