"""Offline stand-in for the state unemployment panel.

A seeded two-factor model on the scale of monthly state unemployment rates
(fractions around 0.03-0.08): unit levels, a seasonal-plus-AR(1) common
factor with unit-specific loadings, a second AR(1) factor with mixed-sign
loadings, and iid idiosyncratic noise. All components are
stationary, so time periods are close to exchangeable.
"""

from __future__ import annotations

import os

import numpy as np

from .panel import Panel, read_panel

BLS_ENV = "SYNTHDESIGN_BLS_CSV"


def two_factor_panel(n_units: int = 50, n_periods: int = 40, seed: int = 20220101, t_pre: int | None = None) -> Panel:
    rng = np.random.default_rng(seed)
    level = np.clip(rng.normal(0.055, 0.012, n_units), 0.025, 0.095)
    t = np.arange(n_periods)
    season = 0.004 * np.sin(2 * np.pi * t / 12.0 + rng.uniform(0, 2 * np.pi))
    f1 = season + _ar1(rng, n_periods, 0.3, 0.004)
    f2 = _ar1(rng, n_periods, 0.3, 0.003)
    load1 = rng.normal(1.0, 0.35, n_units)
    load2 = rng.normal(0.0, 1.0, n_units)
    noise = np.empty((n_units, n_periods))
    rho, sd = 0.0, 0.009
    noise[:, 0] = rng.normal(0.0, sd, n_units)
    for j in range(1, n_periods):
        noise[:, j] = rho * noise[:, j - 1] + rng.normal(0.0, sd * np.sqrt(1 - rho**2), n_units)
    Y = level[:, None] + np.outer(load1, f1) + np.outer(load2, f2) + noise
    Y = np.round(Y, 4)
    units = tuple(f"U{i:02d}" for i in range(n_units))
    periods = tuple(f"M{j + 1:02d}" for j in range(n_periods))
    return Panel(units, periods, Y, n_periods if t_pre is None else t_pre)


def _ar1(rng, n, rho, sd):
    x = np.empty(n)
    x[0] = rng.normal(0.0, sd)
    for j in range(1, n):
        x[j] = rho * x[j - 1] + rng.normal(0.0, sd * np.sqrt(1 - rho**2))
    return x


def bls_panel(t_pre: int | None = None) -> Panel | None:
    """The real BLS panel if ``$SYNTHDESIGN_BLS_CSV`` points to a wide CSV, else None."""
    path = os.environ.get(BLS_ENV)
    if not path or not os.path.exists(path):
        return None
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    s = len(first.strip().split(",")) - 1
    return read_panel(path, s if t_pre is None else t_pre)


def default_source() -> tuple[Panel, str]:
    real = bls_panel()
    if real is not None:
        return real, "bls"
    return two_factor_panel(), "two-factor-fallback"
