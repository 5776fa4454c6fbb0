import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synthdesign.objectives import (
    UNCONSTRAINED,
    ClosedFormInputs,
    closed_form_objective,
    empirical_objective,
    theorem1_one_way,
    theorem1_per_unit,
    theorem1_two_way,
)
from synthdesign.weights import Variant, WeightConstraints

A4 = np.array([0.0, 1.0, 2.0, 3.0])


def cf(a, treated, s2=1.0):
    return ClosedFormInputs(np.asarray(a, dtype=float), s2, tuple(treated))


def hand_per_unit(a, I, s2):
    # independent evaluation with explicit group sums
    a = np.asarray(a, float)
    C = [j for j in range(len(a)) if j not in I]
    mI, mC = sum(a[i] for i in I) / len(I), sum(a[j] for j in C) / len(C)
    vI = sum((a[i] - mI) ** 2 for i in I)
    vC = sum((a[j] - mC) ** 2 for j in C)
    return s2 * (1 / len(C) + ((mI - mC) ** 2 + vI / len(I)) / (s2 + vC))


def test_constant_vector_values():
    a = np.full(6, 3.3)
    assert theorem1_per_unit(cf(a, [0, 1], 2.0)) == pytest.approx(2.0 / 4)
    assert theorem1_two_way(cf(a, [0, 1], 2.0)) == pytest.approx(2.0 * (1 / 2 + 1 / 4))
    assert theorem1_one_way(cf(a, [0, 1], 2.0)) == pytest.approx(2.0 * (1 / 2 + 1 / 4))


def test_two_unit_values():
    assert theorem1_per_unit(cf([0, 1], [0])) == pytest.approx(2.0, abs=1e-15)
    assert theorem1_two_way(cf([0, 1], [0])) == pytest.approx(3.0, abs=1e-15)


def test_four_unit_values():
    assert theorem1_per_unit(cf(A4, [1, 2])) == pytest.approx(6 / 11, abs=1e-15)
    assert theorem1_two_way(cf(A4, [0, 3])) == pytest.approx(1.0, abs=1e-15)
    assert theorem1_two_way(cf(A4, [1, 2])) == pytest.approx(1.0, abs=1e-15)
    assert theorem1_two_way(cf(A4, [0, 1])) == pytest.approx(3.0, abs=1e-15)
    assert theorem1_one_way(cf(A4, [0, 2])) == pytest.approx(4 / 3, abs=1e-15)


def test_four_unit_per_unit_argmin_by_enumeration():
    vals = {I: hand_per_unit(A4, I, 1.0) for I in itertools.combinations(range(4), 2)}
    best = min(vals, key=lambda I: (vals[I], I))
    assert best == (1, 2)
    assert vals[best] == pytest.approx(0.5454545454545454, abs=1e-15)


def test_inputs_validation():
    with pytest.raises(ValueError):
        cf([0, 1, 2], [])
    with pytest.raises(ValueError):
        cf([0, 1, 2], [0, 1, 2])
    with pytest.raises(ValueError):
        cf([0, 1, 2], [0], s2=-1.0)


def test_identical_series_zero_objective():
    pre = np.tile(np.array([0.3, -0.2, 0.9]), (4, 1))
    for variant in (Variant.PER_UNIT, Variant.TWO_WAY, Variant.ONE_WAY):
        assert empirical_objective(pre, [0, 2], 0.0, variant, UNCONSTRAINED) == pytest.approx(0.0, abs=1e-14)


def test_objective_monotone_in_lambda():
    rng = np.random.default_rng(1)
    for _ in range(20):
        pre = rng.normal(0, 1, (7, 4))
        for variant in Variant:
            vals = [empirical_objective(pre, [1, 5], lam, variant, WeightConstraints()) for lam in (0.1, 1.0, 10.0)]
            assert vals[0] <= vals[1] <= vals[2]


@settings(max_examples=150, deadline=None)
@given(
    seed=st.integers(0, 2**31 - 1),
    s2=st.sampled_from([0.5, 1.0, 2.0]),
    variant=st.sampled_from(list(Variant)),
)
def test_empirical_matches_closed_form(seed, s2, variant):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 11))
    k = int(rng.integers(1, n))
    a = rng.normal(0, 1.5, n)
    I = tuple(sorted(rng.choice(n, k, replace=False).tolist()))
    emp = empirical_objective(a[:, None], I, s2, variant, UNCONSTRAINED)
    assert emp == pytest.approx(closed_form_objective(a, I, s2, variant), abs=1e-8)
    if variant is Variant.PER_UNIT:
        assert emp == pytest.approx(hand_per_unit(a, I, s2), abs=1e-8)


@settings(max_examples=150, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), s2=st.floats(0.05, 5.0))
def test_closed_form_inequalities_and_symmetry(seed, s2):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 13))
    k = int(rng.integers(1, n))
    a = rng.normal(0, 1, n)
    I = tuple(sorted(rng.choice(n, k, replace=False).tolist()))
    Ic = tuple(j for j in range(n) if j not in I)
    two, one, per = theorem1_two_way(cf(a, I, s2)), theorem1_one_way(cf(a, I, s2)), theorem1_per_unit(cf(a, I, s2))
    floor = s2 * (1 / k + 1 / (n - k))
    assert one >= two - 1e-15 * abs(two)
    assert two >= floor * (1 - 1e-15)
    assert per >= s2 / (n - k) * (1 - 1e-15)
    # relabelling treated and control groups leaves the two-way value unchanged
    assert theorem1_two_way(cf(a, Ic, s2)) == pytest.approx(two, rel=1e-14)


def test_lower_bound_attained_when_means_equal():
    a = np.array([1.0, 3.0, 2.0, 2.0, 2.0])
    I = (0, 1)
    assert theorem1_two_way(cf(a, I)) == pytest.approx(1 / 2 + 1 / 3, abs=1e-15)
    assert theorem1_one_way(cf(a, I)) == pytest.approx(1 / 2 + 1 / 3, abs=1e-15)
    # per-unit reaches its floor only when the treated group also has no spread
    assert theorem1_per_unit(cf(a, I)) > 1 / 3
    assert theorem1_per_unit(cf([2.0, 2.0, 1.0, 3.0], (0, 1))) == pytest.approx(1 / 2, abs=1e-15)
