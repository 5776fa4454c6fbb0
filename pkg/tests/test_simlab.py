import numpy as np
import pytest

from synthdesign.data import two_factor_panel
from synthdesign.estimators import Method
from synthdesign.inference import Scheme
from synthdesign.simlab import (
    EffectMode,
    LambdaRule,
    SimConfig,
    choose_lambda,
    effects_for,
    power_config,
    run_power_experiment,
    run_rmse_experiment,
    select_lambda_cv,
    select_lambda_variance,
)
from synthdesign.weights import Variant

from conftest import make_panel


def test_lambda_variance_examples():
    assert select_lambda_variance(np.array([[0.0, 2.0], [2.0, 4.0]])) == pytest.approx(1.0, abs=1e-15)
    assert select_lambda_variance(np.full((3, 4), 0.2)) == 0.0
    rng = np.random.default_rng(0)
    Y = rng.normal(size=(5, 6))
    assert select_lambda_variance(3.0 * Y) == pytest.approx(9.0 * select_lambda_variance(Y), rel=1e-12)
    # two periods: mean squared difference over 4
    T2 = rng.normal(size=(6, 2))
    assert select_lambda_variance(T2) == pytest.approx(np.sum((T2[:, 0] - T2[:, 1]) ** 2) / (4 * 6), rel=1e-12)


def test_degenerate_lambda_replaced(caplog):
    p = make_panel(np.full((6, 10), 0.05), t_pre=7)
    cfg = SimConfig(n_sims=1, sub_units=6)
    with caplog.at_level("WARNING"):
        assert choose_lambda(p, cfg) == 1e-8
    assert "degenerate" in caplog.text


def test_lambda_cv():
    p = two_factor_panel(10, 12, seed=1, t_pre=10)
    assert select_lambda_cv(p, [0.7], 5, 3) == 0.7
    lam = select_lambda_variance(p.pre)
    assert select_lambda_cv(p, [lam, 1e6], 6, 3) == lam
    assert select_lambda_cv(p, [1e6, lam], 6, 3) == lam
    a = select_lambda_cv(p, [lam / 10, lam, lam * 10], 6, 3, Variant.TWO_WAY, seed=4)
    b = select_lambda_cv(p, [lam / 10, lam, lam * 10], 6, 3, Variant.TWO_WAY, seed=4)
    assert a == b
    with pytest.raises(ValueError):
        select_lambda_cv(p, [1.0, 2.0], 10, 3)


def test_effects_for():
    np.testing.assert_array_equal(effects_for(EffectMode.HOMOGENEOUS, 4, [0, 1], 0.05), np.full(4, 0.05))
    np.testing.assert_allclose(effects_for(EffectMode.HETEROGENEOUS, 10, [0], 0.05), np.linspace(0, 0.1, 10))
    eff = effects_for(EffectMode.POWER, 6, [4, 1, 2], 0.06)
    np.testing.assert_allclose(eff, [0, 0, 0.03, 0, 0.06, 0])
    assert eff[[1, 2, 4]].mean() == pytest.approx(0.03)


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(sub_periods=7, t_pre=7)
    with pytest.raises(ValueError):
        SimConfig(K=10, sub_units=10)
    with pytest.raises(ValueError):
        SimConfig(lambda_rule=LambdaRule.FIXED)


def small_config(**kw):
    base = dict(n_sims=4, sub_units=6, sub_periods=8, t_pre=6, K=2, seed=3)
    base.update(kw)
    return SimConfig(**base)


def test_zero_noise_duplicates_give_zero_rmse():
    t = np.arange(12)
    series = 0.05 + 0.01 * np.sin(t)
    p = make_panel(np.tile(series, (8, 1)))
    rep = run_rmse_experiment(p, small_config(), "dup")
    for r in rep.rmse_rows:
        assert r["atet_rmse"] == pytest.approx(0.0, abs=1e-14)
        if r["effect_mode"] == "homogeneous":
            assert r["unit_rmse"] == pytest.approx(0.0, abs=1e-14)
        elif r["method"] in ("per-unit", "sc-random"):
            assert r["unit_rmse"] == pytest.approx(0.0, abs=1e-14)


def test_rmse_report_reproducible_and_per_unit_shared():
    src = two_factor_panel(15, 20, seed=2)
    cfg = small_config()
    a = run_rmse_experiment(src, cfg)
    b = run_rmse_experiment(src, cfg)
    assert a.rmse_csv() == b.rmse_csv()
    for method in ("per-unit", "sc-random"):
        for metric in ("atet_rmse", "unit_rmse"):
            # same designs and estimates; only the rounding of Y + tau - tau differs
            assert a.rmse(method, "homogeneous", metric) == pytest.approx(a.rmse(method, "heterogeneous", metric), rel=1e-12)
    homo = [r for r in a.per_sim if r["method"] == "per-unit" and r["effect_mode"] == "homogeneous"]
    het = [r for r in a.per_sim if r["method"] == "per-unit" and r["effect_mode"] == "heterogeneous"]
    assert [r["treated"] for r in homo] == [r["treated"] for r in het]
    assert a.rmse_csv().splitlines()[0] == "effect_mode,K,method,metric,value,n_sims"


def test_random_methods_redraw_independently():
    src = two_factor_panel(15, 20, seed=2)
    rep = run_rmse_experiment(src, small_config(n_sims=6))
    sc = [r["treated"] for r in rep.per_sim if r["method"] == "sc-random" and r["effect_mode"] == "homogeneous"]
    dim = [r["treated"] for r in rep.per_sim if r["method"] == "dim-random" and r["effect_mode"] == "homogeneous"]
    assert sc != dim


def test_parallel_matches_serial():
    src = two_factor_panel(15, 20, seed=2)
    a = run_rmse_experiment(src, small_config(workers=1))
    b = run_rmse_experiment(src, small_config(workers=2))
    assert a.rmse_csv() == b.rmse_csv()


def test_power_small_run():
    src = two_factor_panel(12, 20, seed=5)
    cfg = power_config(
        n_sims=3,
        sub_units=6,
        sub_periods=16,
        t_pre=12,
        K=2,
        n_draws=10,
        tau_grid=(0.0, 0.2),
        methods=(Method.TWO_WAY, Method.DIM_RANDOM),
    )
    a = run_power_experiment(src, cfg)
    b = run_power_experiment(src, cfg)
    assert a.power_csv() == b.power_csv()
    assert len(a.power_rows) == 2 * 2 * 2
    for scheme in Scheme:
        assert a.rejection(Method.TWO_WAY, scheme, 0.2) >= a.rejection(Method.TWO_WAY, scheme, 0.0)
    row = a.power_rows[1]
    assert row["atet"] == pytest.approx(row["tau"] / 2)
