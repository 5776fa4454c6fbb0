"""Treatment-effect estimators for a fixed design, plus a Monte-Carlo check of the conditional MSE."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np

from .panel import Panel
from .selector import Design
from .weights import Variant, WeightConstraints, solve_per_unit_weights


class Method(str, enum.Enum):
    PER_UNIT = "per-unit"
    TWO_WAY = "two-way"
    ONE_WAY = "one-way"
    SC_RANDOM = "sc-random"
    DIM_RANDOM = "dim-random"

    @classmethod
    def parse(cls, value) -> "Method":
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("_", "-")
        key = {
            "perunit": "per-unit",
            "twoway": "two-way",
            "oneway": "one-way",
            "syntheticcontrolrandom": "sc-random",
            "synthetic-control": "sc-random",
            "diffinmeansrandom": "dim-random",
            "diff-in-means": "dim-random",
        }.get(key, key)
        return cls(key)

    @property
    def randomized(self) -> bool:
        return self in (Method.SC_RANDOM, Method.DIM_RANDOM)

    @property
    def variant(self) -> Variant | None:
        return {
            Method.PER_UNIT: Variant.PER_UNIT,
            Method.TWO_WAY: Variant.TWO_WAY,
            Method.ONE_WAY: Variant.ONE_WAY,
            Method.SC_RANDOM: Variant.PER_UNIT,
        }.get(self)


ALL_METHODS = tuple(Method)


@dataclass
class EffectEstimate:
    """ATET, its per-period values, and per-treated-unit effects (averaged over treated periods)."""

    atet: float
    per_period_atet: np.ndarray
    unit_effects: dict[int, float]
    method: Method
    per_unit_period: np.ndarray | None = None  # K x (S - T_pre), rows in ascending treated order
    meta: dict = field(default_factory=dict)

    def to_dict(self, unit_ids=None) -> dict:
        units = {str(k if unit_ids is None else unit_ids[k]): float(v) for k, v in self.unit_effects.items()}
        return {
            "method": self.method.value,
            "atet": float(self.atet),
            "per_period_atet": [float(v) for v in self.per_period_atet],
            "unit_effects": units,
            **self.meta,
        }

    def to_json(self, unit_ids=None) -> str:
        return json.dumps(self.to_dict(unit_ids), indent=2, sort_keys=True)


def _check(panel: Panel, design: Design):
    if design.N != panel.n_units:
        raise ValueError(f"design covers {design.N} units, panel has {panel.n_units}")
    if panel.n_post < 1:
        raise ValueError("panel has no post-treatment periods")
    if not 1 <= design.K <= panel.n_units - 1:
        raise ValueError("design needs at least one treated and one control unit")


def _per_unit_from_matrix(panel: Panel, design: Design, W: np.ndarray, method: Method) -> EffectEstimate:
    I = np.array(design.treated)
    post = panel.post
    W = np.asarray(W, dtype=float) * (design.D == 0)[None, :]
    tau = post[I] - W @ post
    unit = tau.mean(axis=1)
    per_period = tau.mean(axis=0)
    return EffectEstimate(
        atet=float(per_period.mean()),
        per_period_atet=per_period,
        unit_effects={int(i): float(u) for i, u in zip(I, unit)},
        method=method,
        per_unit_period=tau,
    )


def estimate_per_unit(panel: Panel, design: Design, method: Method = Method.PER_UNIT) -> EffectEstimate:
    """Synthetic-control estimate for each treated unit; ATET is their unweighted mean."""
    _check(panel, design)
    if design.weights is None or np.ndim(design.weights.weights) != 2:
        raise ValueError("per-unit estimation needs a K x N weight matrix")
    return _per_unit_from_matrix(panel, design, design.weights.weights, method)


def _global(panel: Panel, D: np.ndarray, w: np.ndarray, method: Method) -> EffectEstimate:
    D = np.asarray(D) != 0
    signed = np.where(D, w, -w)
    per_period = signed @ panel.post
    atet = float(per_period.mean())
    I = np.flatnonzero(D)
    return EffectEstimate(
        atet=atet,
        per_period_atet=per_period,
        unit_effects={int(i): atet for i in I},
        method=method,
        per_unit_period=np.tile(per_period, (I.size, 1)),
    )


def estimate_weighted_atet(panel: Panel, design: Design, method: Method | None = None) -> EffectEstimate:
    """Difference of weighted treated and control means, per post-treatment period."""
    _check(panel, design)
    if design.weights is None or np.ndim(design.weights.weights) != 1:
        raise ValueError("weighted ATET needs a length-N weight vector")
    if method is None:
        method = Method.ONE_WAY if design.variant is Variant.ONE_WAY else Method.TWO_WAY
    return _global(panel, design.D, np.asarray(design.weights.weights, dtype=float), method)


def diff_in_means_weights(D) -> np.ndarray:
    D = np.asarray(D) != 0
    return np.where(D, 1.0 / D.sum(), 1.0 / (~D).sum())


def estimate_diff_in_means(panel: Panel, design: Design) -> EffectEstimate:
    _check(panel, design)
    return _global(panel, design.D, diff_in_means_weights(design.D), Method.DIM_RANDOM)


def estimate(
    panel: Panel,
    design: Design,
    method,
    lam: float | None = None,
    cons: WeightConstraints = WeightConstraints(),
) -> EffectEstimate:
    """Dispatch on method. Random synthetic control fits per-unit weights here if the design has none."""
    method = Method.parse(method)
    if method is Method.DIM_RANDOM:
        return estimate_diff_in_means(panel, design)
    if method is Method.SC_RANDOM:
        if design.weights is None:
            if lam is None:
                raise ValueError("random synthetic control needs lambda to fit weights")
            W = solve_per_unit_weights(panel.pre, design.treated, lam, cons).weights
        else:
            W = design.weights.weights
        _check(panel, design)
        return _per_unit_from_matrix(panel, design, W, Method.SC_RANDOM)
    if method is Method.PER_UNIT:
        return estimate_per_unit(panel, design)
    return estimate_weighted_atet(panel, design, method)


# --------------------------------------------------------------------------
# conditional MSE


@dataclass
class MseCheck:
    """Empirical vs closed-form conditional MSE, one entry per treated unit or a single ATET entry."""

    kind: str  # "per-unit" or "weighted-atet"
    empirical: np.ndarray
    formula: np.ndarray
    bias_sq: np.ndarray
    variance: np.ndarray
    std_error: np.ndarray
    reps: int

    @property
    def z(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            z = (self.empirical - self.formula) / self.std_error
        return np.where(self.std_error > 0, z, np.where(self.empirical == self.formula, 0.0, np.inf))

    def within(self, n_se: float = 3.0) -> bool:
        return bool(np.all(np.abs(self.z) <= n_se))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "reps": self.reps,
            "empirical": self.empirical.tolist(),
            "formula": self.formula.tolist(),
            "bias_sq": self.bias_sq.tolist(),
            "variance": self.variance.tolist(),
            "std_error": self.std_error.tolist(),
            "z": self.z.tolist(),
        }


def mse_formula(mu_post: np.ndarray, sigma2: float, D, weights) -> tuple[np.ndarray, np.ndarray]:
    """Conditional (bias^2, variance) at one post period given the design.

    A weight matrix gives per-unit values (variance sigma2 (1 + sum w^2) per
    treated unit); a weight vector gives the weighted-ATET values
    (variance sigma2 sum w^2).
    """
    mu = np.asarray(mu_post, dtype=float)
    D = np.asarray(D) != 0
    w = np.asarray(weights, dtype=float)
    if w.ndim == 2:
        Wc = w * (~D)[None, :]
        bias = mu[D] - Wc @ mu
        var = sigma2 * (1.0 + np.sum(Wc**2, axis=1))
        return bias**2, var
    signed = np.where(D, w, -w)
    bias = np.array([signed @ mu])
    return bias**2, np.array([sigma2 * np.sum(w**2)])


def mse_oracle_check(mu, sigma2: float, design: Design, reps: int, seed: int, weights=None) -> MseCheck:
    """Simulate Y = mu + eps at one post period and compare the empirical MSE with the closed form.

    ``mu`` is a length-N mean vector (or N x S matrix, last column used).
    Effects cancel in the error so none are added. Returns the per-unit check
    for weight matrices and the weighted-ATET check for weight vectors.
    """
    mu = np.asarray(mu, dtype=float)
    if mu.ndim == 2:
        mu = mu[:, -1]
    w = np.asarray(design.weights.weights if weights is None else weights, dtype=float)
    D = np.asarray(design.D) != 0
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((reps, mu.size)) * np.sqrt(sigma2)
    Y = mu[None, :] + eps
    if w.ndim == 2:
        Wc = w * (~D)[None, :]
        err = Y[:, D] - Y @ Wc.T  # reps x K
        kind = "per-unit"
    else:
        signed = np.where(D, w, -w)
        err = (Y @ signed)[:, None]
        kind = "weighted-atet"
    sq = err**2
    empirical = sq.mean(axis=0)
    se = sq.std(axis=0, ddof=1) / np.sqrt(reps)
    bias_sq, var = mse_formula(mu, sigma2, D, w)
    return MseCheck(kind, empirical, bias_sq + var, bias_sq, var, se, reps)
