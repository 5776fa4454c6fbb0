import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synthdesign.objectives import UNCONSTRAINED, closed_form_objective
from synthdesign.selector import (
    Design,
    DesignProblem,
    Mode,
    SelectionError,
    better,
    random_design,
    select_design,
    verify_design,
)
from synthdesign.weights import Variant, WeightConstraints, WeightSolution

from conftest import make_panel

A4 = np.array([0.0, 1.0, 2.0, 3.0])


def test_four_unit_two_way_tie_break():
    d = select_design(make_panel(A4), DesignProblem(Variant.TWO_WAY, 2, 1.0, UNCONSTRAINED, Mode.EXACT))
    assert d.treated == (0, 3)
    assert d.objective == pytest.approx(1.0, abs=1e-12)
    assert d.exact


def test_four_unit_per_unit():
    d = select_design(make_panel(A4), DesignProblem(Variant.PER_UNIT, 2, 1.0, UNCONSTRAINED, Mode.EXACT))
    assert d.treated == (1, 2)
    assert d.objective == pytest.approx(6 / 11, abs=1e-12)


def test_two_unit_cases():
    p = make_panel(np.array([[0.0, 1.0], [0.0, 1.0]]))
    d = select_design(p, DesignProblem(Variant.PER_UNIT, 1, 1.0, mode=Mode.EXACT))
    assert d.treated == (0,)
    rng = np.random.default_rng(2)
    for _ in range(10):
        Y = rng.normal(0, 1, (2, 3))
        prob = DesignProblem(Variant.PER_UNIT, 1, 0.5, mode=Mode.EXACT)
        from synthdesign.objectives import empirical_objective

        objs = [empirical_objective(Y, [i], 0.5, Variant.PER_UNIT) for i in range(2)]
        assert select_design(Y, prob).treated == (int(np.argmin(objs)),)


def test_better_tie_rule():
    assert better(1.0, (0, 3), 1.0 + 1e-13, (1, 2))
    assert not better(1.0 + 1e-13, (1, 2), 1.0, (0, 3))
    assert better(0.5, (5,), 1.0, (0,))
    assert better(2.0, (1,), math.inf, None)


def test_problem_validation():
    with pytest.raises(SelectionError):
        DesignProblem(Variant.TWO_WAY, 2, 0.0)
    with pytest.raises(SelectionError):
        DesignProblem(Variant.TWO_WAY, 0, 1.0)
    assert DesignProblem(Variant.ONE_WAY, 2, 1.0).cons.treated_equal
    with pytest.raises(SelectionError):
        select_design(make_panel(A4), DesignProblem(Variant.TWO_WAY, 4, 1.0))


def test_exact_refuses_above_limit():
    Y = np.random.default_rng(0).normal(size=(12, 3))
    with pytest.raises(SelectionError, match="C\\(12,6\\) = 924"):
        select_design(Y, DesignProblem(Variant.TWO_WAY, 6, 1.0, mode=Mode.EXACT, enum_limit=100))
    d = select_design(Y, DesignProblem(Variant.TWO_WAY, 6, 1.0, mode=Mode.AUTO, enum_limit=100, restarts=3))
    assert not d.exact and d.meta["mode"] == "local"


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), variant=st.sampled_from(list(Variant)))
def test_exact_not_worse_than_local(seed, variant):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 9))
    k = int(rng.integers(1, n))
    Y = rng.normal(0, 1, (n, 3))
    ex = select_design(Y, DesignProblem(variant, k, 0.7, mode=Mode.EXACT))
    lo = select_design(Y, DesignProblem(variant, k, 0.7, mode=Mode.LOCAL, restarts=3, seed=seed))
    assert ex.objective <= lo.objective + 1e-12 * max(1.0, abs(lo.objective))


def test_exact_matches_brute_force_closed_forms():
    rng = np.random.default_rng(11)
    for _ in range(30):
        n = int(rng.integers(2, 8))
        k = int(rng.integers(1, n))
        a = rng.normal(0, 1, n)
        variant = list(Variant)[int(rng.integers(0, 3))]
        vals = {I: closed_form_objective(a, I, 1.0, variant) for I in itertools.combinations(range(n), k)}
        best = min(vals.values())
        ties = sorted(I for I, v in vals.items() if v <= best + 1e-10 * max(1.0, abs(best)))
        d = select_design(make_panel(a), DesignProblem(variant, k, 1.0, UNCONSTRAINED, Mode.EXACT))
        assert d.treated == ties[0]
        assert d.objective == pytest.approx(best, abs=1e-8)


def test_two_way_complement():
    rng = np.random.default_rng(12)
    for _ in range(10):
        n = int(rng.integers(5, 10))
        k = int(rng.integers(1, n))
        if 2 * k == n:
            continue
        Y = rng.normal(0, 1, (n, 4))
        a = select_design(Y, DesignProblem(Variant.TWO_WAY, k, 0.5, mode=Mode.EXACT))
        b = select_design(Y, DesignProblem(Variant.TWO_WAY, n - k, 0.5, mode=Mode.EXACT))
        assert a.treated == b.controls


def test_invariant_to_row_permutation():
    rng = np.random.default_rng(13)
    Y = rng.normal(0, 1, (7, 4))
    perm = rng.permutation(7)
    for variant in Variant:
        a = select_design(Y, DesignProblem(variant, 3, 0.5, mode=Mode.EXACT))
        b = select_design(Y[perm], DesignProblem(variant, 3, 0.5, mode=Mode.EXACT))
        assert sorted(perm[list(b.treated)].tolist()) == list(a.treated)
        assert b.objective == pytest.approx(a.objective, rel=1e-10)


def test_local_search_deterministic():
    Y = np.random.default_rng(14).normal(size=(14, 4))
    prob = DesignProblem(Variant.PER_UNIT, 4, 0.5, mode=Mode.LOCAL, restarts=4, seed=3)
    assert select_design(Y, prob).treated == select_design(Y, prob).treated


def test_parallel_enumeration_agrees():
    Y = np.random.default_rng(15).normal(size=(9, 3))
    prob = DesignProblem(Variant.TWO_WAY, 4, 0.5, mode=Mode.EXACT)
    assert select_design(Y, prob, workers=2).treated == select_design(Y, prob, workers=1).treated


def test_random_design():
    with pytest.raises(SelectionError):
        random_design(5, 5, 0)
    assert random_design(8, 3, 42).treated == random_design(8, 3, 42).treated
    d = random_design(8, 3, 42)
    assert d.weights is None and np.isnan(d.objective) and d.K == 3


def test_random_design_is_uniform():
    draws = 10_000
    rng = np.random.default_rng(99)
    counts = {}
    for _ in range(draws):
        t = random_design(5, 2, rng).treated
        counts[t] = counts.get(t, 0) + 1
    assert len(counts) == 10
    sd = math.sqrt(draws * 0.1 * 0.9)
    for c in counts.values():
        assert abs(c - draws * 0.1) <= 4 * sd


def test_design_json_round_trip():
    Y = np.random.default_rng(16).normal(size=(6, 3))
    for variant in Variant:
        d = select_design(Y, DesignProblem(variant, 2, 0.5))
        back = Design.from_json(d.to_json([f"u{i}" for i in range(6)]))
        np.testing.assert_array_equal(back.D, d.D)
        np.testing.assert_array_equal(back.weights.weights, d.weights.weights)
        assert back.objective == d.objective and back.variant is d.variant and back.lam == d.lam
        assert back.cons == d.cons


def test_verify_design():
    Y = np.random.default_rng(17).normal(size=(7, 4))
    for variant in Variant:
        prob = DesignProblem(variant, 3, 0.5, WeightConstraints())
        d = select_design(Y, prob)
        rep = verify_design(Y, prob, d)
        assert rep.ok, rep.to_dict()
        tampered = Design(np.array([1, 1, 1, 1, 0, 0, 0]), d.weights, d.objective, d.exact)
        assert "cardinality" in verify_design(Y, prob, tampered).failed()
        w = np.array(d.weights.weights, dtype=float)
        if w.ndim == 1:
            C = list(d.controls)
            w[C[0]] += 0.05
            w[C[1]] -= 0.05
        else:
            C = list(d.controls)
            w[:, C[0]] += 0.05
            w[:, C[1]] -= 0.05
        w = np.abs(w)
        sol = WeightSolution(w, d.weights.objective, 0.0, 0)
        bad = Design(d.D, sol, d.objective, d.exact, variant)
        failed = verify_design(Y, prob, bad).failed()
        assert "kkt" in failed
