"""Design objectives: empirical values via the weight solver and single-period closed forms.

The ridge penalty ``lam`` plays the role of the noise variance estimate
throughout; the closed forms take the same quantity as ``sigma2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .weights import Variant, WeightConstraints, solve_weights

UNCONSTRAINED = WeightConstraints(nonnegative=False, normalize=True)


@dataclass(frozen=True)
class ClosedFormInputs:
    a: np.ndarray
    sigma2: float
    treated: tuple[int, ...]

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).ravel()
        treated = tuple(sorted(int(i) for i in self.treated))
        if not 1 <= len(set(treated)) <= a.size - 1 or len(set(treated)) != len(treated):
            raise ValueError(f"treated set must hold 1..{a.size - 1} distinct units")
        if treated[0] < 0 or treated[-1] >= a.size:
            raise ValueError("treated index out of range")
        if not self.sigma2 >= 0:
            raise ValueError(f"sigma2 must be >= 0, got {self.sigma2}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "treated", treated)

    def stats(self):
        """(N, K, treated mean, control mean, V_I^2, V_C^2); V is a sum of squared deviations."""
        a = self.a
        mask = np.zeros(a.size, bool)
        mask[list(self.treated)] = True
        aI, aC = a[mask], a[~mask]
        mI, mC = aI.mean(), aC.mean()
        return a.size, aI.size, mI, mC, float(np.sum((aI - mI) ** 2)), float(np.sum((aC - mC) ** 2))


def theorem1_per_unit(inp: ClosedFormInputs) -> float:
    n, k, mI, mC, vI, vC = inp.stats()
    s2 = inp.sigma2
    return float(s2 * (1.0 / (n - k) + ((mI - mC) ** 2 + vI / k) / (s2 + vC)))


def theorem1_two_way(inp: ClosedFormInputs) -> float:
    n, k, mI, mC, vI, vC = inp.stats()
    s2 = inp.sigma2
    return float(s2 * (1.0 / k + 1.0 / (n - k) + (mI - mC) ** 2 / (s2 + vI + vC)))


def theorem1_one_way(inp: ClosedFormInputs) -> float:
    n, k, mI, mC, vI, vC = inp.stats()
    s2 = inp.sigma2
    return float(s2 * (1.0 / k + 1.0 / (n - k) + (mI - mC) ** 2 / (s2 + vC)))


CLOSED_FORMS = {
    Variant.PER_UNIT: theorem1_per_unit,
    Variant.ONE_WAY: theorem1_one_way,
    Variant.TWO_WAY: theorem1_two_way,
}


def closed_form_objective(a, treated: Sequence[int], sigma2: float, variant) -> float:
    return CLOSED_FORMS[Variant.parse(variant)](ClosedFormInputs(np.asarray(a), sigma2, tuple(treated)))


def empirical_objective(pre, treated: Sequence[int], lam: float, variant, cons: WeightConstraints = WeightConstraints()) -> float:
    """Optimal objective value for a fixed treated set, inner weights solved exactly."""
    return solve_weights(variant, pre, treated, lam, cons).objective
