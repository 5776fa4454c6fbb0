import numpy as np
import pytest

from synthdesign.panel import Panel


def make_panel(Y, t_pre=None) -> Panel:
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, s = Y.shape
    return Panel(tuple(f"u{i}" for i in range(n)), tuple(f"t{j}" for j in range(s)), Y, s if t_pre is None else t_pre)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_panel():
    from synthdesign.data import two_factor_panel

    return two_factor_panel(n_units=8, n_periods=10, seed=7, t_pre=7)
