"""Permutation tests over time periods for the sharp null of no treatment effect.

Each draw reorders the S periods (iid shuffle or cyclic shift), treats the
last S - T_pre periods of the reordered sample as the treated block, re-fits
the weights on the reordered pre-block with the treated set held fixed, and
recomputes the statistic |ATET| / sqrt(S - T_pre). Draw 0 is always the
identity ordering.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .estimators import EffectEstimate, Method, estimate
from .panel import Panel
from .selector import Design
from .weights import WeightConstraints, solve_weights


TIE_RTOL = 1e-12


class Scheme(str, enum.Enum):
    IID = "iid"
    MOVING_BLOCK = "moving-block"

    @classmethod
    def parse(cls, value) -> "Scheme":
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("_", "-")
        key = {"movingblock": "moving-block", "block": "moving-block"}.get(key, key)
        return cls(key)


@dataclass
class PermutationTest:
    scheme: Scheme
    n_draws: int
    alpha: float
    observed_stat: float
    reference: np.ndarray
    p_value: float
    reject: bool
    method: Method | None = None
    seed: int | None = None
    warnings: list[str] = field(default_factory=list)

    @property
    def critical_value(self) -> float:
        return float(np.quantile(self.reference, 1.0 - self.alpha))

    def to_dict(self) -> dict:
        qs = [0.5, 0.9, 0.95, 0.99]
        return {
            "scheme": self.scheme.value,
            "method": None if self.method is None else self.method.value,
            "n_draws": self.n_draws,
            "alpha": self.alpha,
            "observed_stat": float(self.observed_stat),
            "critical_value": self.critical_value,
            "reference_quantiles": {str(q): float(np.quantile(self.reference, q)) for q in qs},
            "reference": [float(v) for v in self.reference],
            "p_value": float(self.p_value),
            "reject": bool(self.reject),
            "seed": self.seed,
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def test_statistic(per_period_atet, n_treated_periods: int) -> float:
    return float(abs(np.mean(per_period_atet)) / math.sqrt(n_treated_periods))


test_statistic.__test__ = False  # not a pytest test


def permute_periods(s: int, scheme, draw: int, seed: int = 0) -> np.ndarray:
    """0-based period ordering for one draw.

    Moving block: cyclic shift by ``draw`` (draw k starts at period k).
    IID: seeded shuffle from the (seed, draw) stream; draw 0 is the identity.
    """
    scheme = Scheme.parse(scheme)
    if scheme is Scheme.MOVING_BLOCK:
        return np.roll(np.arange(s), -(draw % s))
    if draw == 0:
        return np.arange(s)
    return np.random.default_rng([seed, draw]).permutation(s)


def _refit(panel: Panel, design: Design, method: Method, lam, cons) -> Design:
    """Same treated set, weights re-solved on this panel's pre-block."""
    variant = method.variant
    if variant is None:
        return design
    if lam is None:
        raise ValueError(f"method {method.value} needs lambda to re-fit weights")
    if method is Method.ONE_WAY:
        cons = WeightConstraints(cons.nonnegative, cons.normalize, True)
    sol = solve_weights(variant, panel.pre, design.treated, lam, cons)
    return Design(design.D, sol, sol.objective, design.exact, variant, lam, cons, design.seed)


def _stat(panel: Panel, design: Design, method: Method, lam, cons) -> float:
    est: EffectEstimate = estimate(panel, _refit(panel, design, method, lam, cons), method, lam, cons)
    return test_statistic(est.per_period_atet, panel.n_post)


def permutation_test(
    panel: Panel,
    design: Design,
    method,
    scheme,
    n_draws: int,
    alpha: float = 0.1,
    seed: int = 0,
    lam: float | None = None,
    cons: WeightConstraints | None = None,
) -> PermutationTest:
    """Permutation test of the sharp null with the treated units held fixed.

    ``lam`` and ``cons`` default to those recorded on the design. The p-value
    is (1 + #{reference >= observed}) / (1 + n_draws); rejection means the
    observed statistic exceeds the (1 - alpha) quantile of the reference.
    The identity draw is part of the reference, so the smallest attainable
    p-value is 2 / (1 + n_draws). Comparisons treat values within
    ``TIE_RTOL`` times the largest absolute outcome as ties.
    """
    method = Method.parse(method)
    scheme = Scheme.parse(scheme)
    if panel.n_post < 1:
        raise ValueError("permutation test needs at least one post-treatment period")
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    lam = design.lam if lam is None else lam
    cons = (design.cons or WeightConstraints()) if cons is None else cons
    warnings = []
    s = panel.n_periods
    if scheme is Scheme.MOVING_BLOCK and n_draws > s:
        warnings.append(f"moving-block draws capped at S={s} (requested {n_draws})")
        n_draws = s
    observed = _stat(panel, design, method, lam, cons)
    ref = np.empty(n_draws)
    identity = np.arange(s)
    for d in range(n_draws):
        order = permute_periods(s, scheme, d, seed)
        if np.array_equal(order, identity):
            ref[d] = observed
        else:
            ref[d] = _stat(panel.with_outcomes(panel.Y[:, order]), design, method, lam, cons)
    # statistics that differ only by rounding count as ties
    tol = TIE_RTOL * max(float(np.abs(panel.Y).max()), np.finfo(float).tiny)
    p = (1.0 + np.sum(ref >= observed - tol)) / (1.0 + n_draws)
    reject = bool(observed > np.quantile(ref, 1.0 - alpha) + tol)
    return PermutationTest(scheme, n_draws, alpha, observed, ref, float(p), reject, method, seed, warnings)
