import numpy as np
import pytest

from synthdesign.mip import MipExportError, export_mip, mip_assignment, read_mps, to_mps
from synthdesign.objectives import empirical_objective
from synthdesign.selector import Design, DesignProblem, Mode, indicator, random_design, select_design
from synthdesign.weights import Variant, WeightConstraints, solve_weights

from conftest import make_panel


def random_case(rng, variant, n=None, T=None):
    n = n or int(rng.integers(3, 8))
    T = T or int(rng.integers(1, 5))
    k = int(rng.integers(1, n))
    panel = make_panel(rng.normal(0, 1, (n, T)))
    lam = float(rng.choice([0.1, 0.5, 2.0]))
    problem = DesignProblem(variant, k, lam, WeightConstraints(), Mode.EXACT)
    D = random_design(n, k, rng).D
    sol = solve_weights(variant, panel.pre, np.flatnonzero(D), lam, problem.cons)
    return panel, problem, Design(D, sol, sol.objective, False, variant, lam, problem.cons)


def test_per_unit_variable_counts():
    panel = make_panel(np.arange(6.0).reshape(3, 2))
    m = export_mip(panel, DesignProblem(Variant.PER_UNIT, 1, 1.0))
    assert m.counts() == {"binary": 3, "continuous": 18, "free": 6}
    assert [m.prefix_count(p) for p in "DWQZ"] == [3, 9, 9, 6]


def test_two_way_sum_row_present():
    panel = make_panel(np.random.default_rng(0).normal(size=(5, 2)))
    m = export_mip(panel, DesignProblem(Variant.TWO_WAY, 2, 1.0))
    row = m.row("WSUM")
    assert row.sense == "E" and row.rhs == 2.0 and set(row.coefs) == {f"W_{i}" for i in range(5)}
    assert all(c == 1.0 for c in row.coefs.values())
    assert " E WSUM" in to_mps(m) and "    RHS WSUM 2.0" in to_mps(m)


def test_one_way_fixes_treated_share():
    panel = make_panel(np.random.default_rng(1).normal(size=(5, 2)))
    m = export_mip(panel, DesignProblem(Variant.ONE_WAY, 2, 1.0))
    assert m.row("QFIX_3").coefs == {"Q_3": 1.0, "D_3": -0.5}


@pytest.mark.parametrize("variant", list(Variant))
def test_assignment_is_feasible_and_matches_objective(variant):
    rng = np.random.default_rng(2)
    for _ in range(10):
        panel, problem, design = random_case(rng, variant)
        model = export_mip(panel, problem)
        x = mip_assignment(panel, problem, design)
        assert all(v <= 1e-10 for v in model.violations(x).values()), model.violations(x)
        emp = empirical_objective(panel.pre, design.treated, problem.lam, variant, problem.cons)
        assert model.objective(x) == pytest.approx(emp, abs=1e-9)


@pytest.mark.parametrize("variant", list(Variant))
def test_mps_round_trip(variant):
    rng = np.random.default_rng(3)
    panel, problem, design = random_case(rng, variant)
    model = export_mip(panel, problem)
    text = to_mps(model)
    back = read_mps(text)
    assert [v.name for v in back.variables] == [v.name for v in model.variables]
    assert back.counts() == model.counts()
    assert [(r.name, r.sense, r.rhs) for r in back.rows] == [(r.name, r.sense, r.rhs) for r in model.rows]
    for r0, r1 in zip(model.rows, back.rows):
        assert {k: v for k, v in r0.coefs.items() if v != 0} == r1.coefs
    x = mip_assignment(panel, problem, design)
    assert back.objective(x) == pytest.approx(model.objective(x), abs=1e-12)
    assert to_mps(back) == text


def test_infeasible_assignment_detected():
    rng = np.random.default_rng(4)
    panel, problem, design = random_case(rng, Variant.TWO_WAY, n=5)
    model = export_mip(panel, problem)
    x = mip_assignment(panel, problem, design)
    x["D_0"] = 0.5
    assert "D_0" in model.violations(x)


def test_per_unit_k_free_epigraph():
    rng = np.random.default_rng(5)
    panel, problem, design = random_case(rng, Variant.PER_UNIT, n=5, T=3)
    model = export_mip(panel, problem, k_free=True)
    assert "CARD" not in [r.name for r in model.rows]
    x = mip_assignment(panel, problem, design)
    x["Y"] = design.objective
    viol = model.violations(x)
    assert all(v <= 1e-10 for v in viol.values()), viol
    assert model.objective(x) == pytest.approx(design.objective, abs=1e-12)
    x["Y"] = design.objective * 0.9
    assert "EPI" in model.violations(x)
    back = read_mps(to_mps(model))
    x["Y"] = design.objective
    assert back.row("EPI").quad.keys() == model.row("EPI").quad.keys()
    assert back.objective(x) == pytest.approx(design.objective, abs=1e-12)


def test_export_errors():
    panel = make_panel(np.random.default_rng(6).normal(size=(4, 2)))
    with pytest.raises(MipExportError):
        export_mip(panel, DesignProblem(Variant.TWO_WAY, 2, 1.0, WeightConstraints(nonnegative=False)))
    with pytest.raises(MipExportError):
        export_mip(panel, DesignProblem(Variant.ONE_WAY, 2, 1.0), k_free=True)
    with pytest.raises(MipExportError):
        export_mip(panel, DesignProblem(Variant.TWO_WAY, 4, 1.0))


def test_selected_design_scores_lowest_in_model():
    rng = np.random.default_rng(7)
    panel = make_panel(rng.normal(size=(6, 3)))
    problem = DesignProblem(Variant.TWO_WAY, 2, 0.5, mode=Mode.EXACT)
    model = export_mip(panel, problem)
    best = select_design(panel, problem)
    best_val = model.objective(mip_assignment(panel, problem, best))
    for t in [(0, 1), (2, 5), (3, 4)]:
        sol = solve_weights(Variant.TWO_WAY, panel.pre, t, 0.5)
        d = Design(indicator(6, t), sol, sol.objective, False, Variant.TWO_WAY)
        assert model.objective(mip_assignment(panel, problem, d)) >= best_val - 1e-12
