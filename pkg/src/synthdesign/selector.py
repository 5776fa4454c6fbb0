"""Treated-set selection: exhaustive enumeration, restarted swap local search, random designs."""

from __future__ import annotations

import enum
import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .panel import Panel
from .weights import (
    KKT_TOL,
    Variant,
    WeightConstraints,
    WeightSolution,
    WeightSolverError,
    kkt_residual,
    solve_weights,
    weight_objective,
)

log = logging.getLogger(__name__)

# relative tolerance under which two objective values count as tied
TIE_RTOL = 1e-10
# local search accepts a swap only if it improves by more than this
SWAP_EPS = 1e-12


class Mode(str, enum.Enum):
    EXACT = "exact"
    LOCAL = "local"
    AUTO = "auto"

    @classmethod
    def parse(cls, value) -> "Mode":
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("_", "-")
        key = {"exactenum": "exact", "exact-enum": "exact", "localsearch": "local", "local-search": "local"}.get(key, key)
        return cls(key)


class SelectionError(ValueError):
    """Raised when a design problem cannot be solved as requested."""


@dataclass(frozen=True)
class DesignProblem:
    variant: Variant
    K: int
    lam: float
    cons: WeightConstraints = WeightConstraints()
    mode: Mode = Mode.AUTO
    enum_limit: int = 200_000
    restarts: int = 20
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        if self.K < 1:
            raise SelectionError(f"K must be >= 1, got {self.K}")
        if not self.lam > 0:
            raise SelectionError(f"lambda must be > 0 for design selection, got {self.lam}")
        if self.variant is Variant.ONE_WAY and not self.cons.treated_equal:
            object.__setattr__(self, "cons", WeightConstraints(self.cons.nonnegative, self.cons.normalize, True))

    def to_dict(self) -> dict:
        return {
            "variant": self.variant.value,
            "K": self.K,
            "lambda": self.lam,
            "constraints": self.cons.to_dict(),
            "mode": self.mode.value,
            "enum_limit": self.enum_limit,
            "restarts": self.restarts,
            "seed": self.seed,
        }


@dataclass
class Design:
    """Treatment indicator plus fitted weights.

    ``weights`` may be None for random designs whose weights are fitted later
    by the estimator.
    """

    D: np.ndarray
    weights: WeightSolution | None
    objective: float
    exact: bool
    variant: Variant | None = None
    lam: float | None = None
    cons: WeightConstraints | None = None
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def treated(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.D))

    @property
    def controls(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.D == 0))

    @property
    def K(self) -> int:
        return int(np.sum(self.D))

    @property
    def N(self) -> int:
        return int(self.D.shape[0])

    def to_dict(self, unit_ids: Sequence[str] | None = None) -> dict:
        out = {
            "D": [int(d) for d in self.D],
            "treated": list(self.treated),
            "variant": None if self.variant is None else self.variant.value,
            "lambda": self.lam,
            "constraints": None if self.cons is None else self.cons.to_dict(),
            "objective": _num(self.objective),
            "exact": self.exact,
            "seed": self.seed,
            "weights": None,
            "kkt_residual": None,
            "meta": self.meta,
        }
        if unit_ids is not None:
            out["unit_ids"] = list(unit_ids)
            out["treated_ids"] = [unit_ids[i] for i in self.treated]
        if self.weights is not None:
            out["weights"] = np.asarray(self.weights.weights).tolist()
            out["kkt_residual"] = self.weights.kkt_residual
            out["iterations"] = self.weights.iterations
        return out

    def to_json(self, unit_ids: Sequence[str] | None = None) -> str:
        return json.dumps(self.to_dict(unit_ids), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "Design":
        ws = None
        if d.get("weights") is not None:
            ws = WeightSolution(np.asarray(d["weights"], dtype=float), float(d["objective"]), float(d.get("kkt_residual") or 0.0), int(d.get("iterations") or 0))
        cons = None if d.get("constraints") is None else WeightConstraints(**d["constraints"])
        obj = d.get("objective")
        return cls(
            D=np.asarray(d["D"], dtype=int),
            weights=ws,
            objective=float("nan") if obj is None else float(obj),
            exact=bool(d.get("exact", False)),
            variant=None if d.get("variant") is None else Variant.parse(d["variant"]),
            lam=d.get("lambda"),
            cons=cons,
            seed=d.get("seed"),
            meta=d.get("meta") or {},
        )

    @classmethod
    def from_json(cls, text: str) -> "Design":
        return cls.from_dict(json.loads(text))


def _num(x):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else float(x)


def indicator(n: int, treated: Iterable[int]) -> np.ndarray:
    D = np.zeros(n, dtype=int)
    D[list(treated)] = 1
    return D


def better(obj: float, key: tuple, best_obj: float, best_key: tuple | None) -> bool:
    """Ordering used everywhere a best subset is kept: objective first, ties by sorted index tuple."""
    if best_key is None:
        return True
    tol = TIE_RTOL * max(abs(obj), abs(best_obj))
    if obj < best_obj - tol:
        return True
    if obj <= best_obj + tol:
        return key < best_key
    return False


def _evaluate(pre, subset, problem: DesignProblem) -> float:
    return solve_weights(problem.variant, pre, subset, problem.lam, problem.cons).objective


def _enumerate_chunk(args):
    pre, subsets, problem = args
    best_obj, best_key = math.inf, None
    for s in subsets:
        obj = _evaluate(pre, s, problem)
        if better(obj, s, best_obj, best_key):
            best_obj, best_key = obj, s
    return best_obj, best_key


def exact_enumeration(pre: np.ndarray, problem: DesignProblem, workers: int = 1) -> tuple[tuple[int, ...], float]:
    n = pre.shape[0]
    count = math.comb(n, problem.K)
    if count > problem.enum_limit:
        raise SelectionError(
            f"exact enumeration needs C({n},{problem.K}) = {count} subsets, above enum_limit={problem.enum_limit}"
        )
    subsets = list(itertools.combinations(range(n), problem.K))
    if workers <= 1 or count < 64:
        best_obj, best_key = _enumerate_chunk((pre, subsets, problem))
    else:
        size = math.ceil(len(subsets) / workers)
        chunks = [(pre, subsets[i : i + size], problem) for i in range(0, len(subsets), size)]
        best_obj, best_key = math.inf, None
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for obj, key in pool.map(_enumerate_chunk, chunks):
                if key is not None and better(obj, key, best_obj, best_key):
                    best_obj, best_key = obj, key
    return best_key, best_obj


def local_search(pre: np.ndarray, problem: DesignProblem) -> tuple[tuple[int, ...], float]:
    """Best of ``restarts`` best-improvement single-swap descents from random K-subsets."""
    n = pre.shape[0]
    cache: dict[tuple[int, ...], float] = {}

    def f(s):
        if s not in cache:
            cache[s] = _evaluate(pre, s, problem)
        return cache[s]

    best_obj, best_key = math.inf, None
    for r in range(problem.restarts):
        rng = np.random.default_rng([problem.seed, r])
        cur = tuple(sorted(int(i) for i in rng.choice(n, size=problem.K, replace=False)))
        cur_obj = f(cur)
        while True:
            cand_obj, cand_key = math.inf, None
            inside = set(cur)
            for i in cur:
                for j in range(n):
                    if j in inside:
                        continue
                    s = tuple(sorted((inside - {i}) | {j}))
                    obj = f(s)
                    if better(obj, s, cand_obj, cand_key):
                        cand_obj, cand_key = obj, s
            if cand_key is None or not cand_obj < cur_obj - SWAP_EPS * max(1.0, abs(cur_obj)):
                break
            cur, cur_obj = cand_key, cand_obj
        if better(cur_obj, cur, best_obj, best_key):
            best_obj, best_key = cur_obj, cur
    return best_key, best_obj


def select_design(panel: Panel | np.ndarray, problem: DesignProblem, workers: int = 1) -> Design:
    """Choose the treated set and weights minimizing the problem's objective on pre-period data."""
    pre = panel.pre if isinstance(panel, Panel) else np.asarray(panel, dtype=float)
    if pre.ndim == 1:
        pre = pre[:, None]
    n = pre.shape[0]
    if not 1 <= problem.K <= n - 1:
        raise SelectionError(f"K={problem.K} must lie in [1, {n - 1}] for N={n}")
    mode = problem.mode
    if mode is Mode.AUTO:
        mode = Mode.EXACT if math.comb(n, problem.K) <= problem.enum_limit else Mode.LOCAL
    if mode is Mode.EXACT:
        subset, _ = exact_enumeration(pre, problem, workers)
    else:
        subset, _ = local_search(pre, problem)
    sol = solve_weights(problem.variant, pre, subset, problem.lam, problem.cons)
    return Design(
        D=indicator(n, subset),
        weights=sol,
        objective=sol.objective,
        exact=mode is Mode.EXACT,
        variant=problem.variant,
        lam=problem.lam,
        cons=problem.cons,
        seed=problem.seed,
        meta={"mode": mode.value},
    )


def random_design(n: int, k: int, seed: int | np.random.Generator) -> Design:
    """Uniformly random K-subset; weights are left for the estimator to fit."""
    if not 1 <= k <= n - 1:
        raise SelectionError(f"k={k} must lie in [1, {n - 1}] for n={n}")
    rng = np.random.default_rng(seed)
    subset = sorted(int(i) for i in rng.choice(n, size=k, replace=False))
    return Design(
        D=indicator(n, subset),
        weights=None,
        objective=float("nan"),
        exact=False,
        seed=seed if isinstance(seed, int) else None,
        meta={"mode": "random"},
    )


@dataclass
class VerificationReport:
    checks: dict[str, tuple[bool, float | str]]

    @property
    def ok(self) -> bool:
        return all(passed for passed, _ in self.checks.values())

    def failed(self) -> list[str]:
        return [name for name, (passed, _) in self.checks.items() if not passed]

    def to_dict(self) -> dict:
        return {"ok": self.ok, "checks": {k: {"pass": p, "value": v} for k, (p, v) in self.checks.items()}}


def verify_design(panel: Panel | np.ndarray, problem: DesignProblem, design: Design) -> VerificationReport:
    """Re-check feasibility, objective value and inner-weight optimality of a design."""
    pre = panel.pre if isinstance(panel, Panel) else np.asarray(panel, dtype=float)
    if pre.ndim == 1:
        pre = pre[:, None]
    n = pre.shape[0]
    checks: dict[str, tuple[bool, float | str]] = {}
    D = np.asarray(design.D)
    shape_ok = D.shape == (n,) and bool(np.all((D == 0) | (D == 1)))
    checks["indicator_binary"] = (shape_ok, f"shape={D.shape}")
    checks["cardinality"] = (int(D.sum()) == problem.K, int(D.sum()))
    if not shape_ok or design.weights is None or not 1 <= int(D.sum()) <= n - 1:
        checks["weights_present"] = (design.weights is not None, "")
        return VerificationReport(checks)
    treated = design.treated
    I = np.array(treated)
    C = np.array(design.controls)
    w = np.asarray(design.weights.weights, dtype=float)
    cons = problem.cons
    if problem.variant is Variant.PER_UNIT:
        shape_ok = w.shape == (I.size, n)
        checks["weights_shape"] = (shape_ok, str(w.shape))
        if not shape_ok:
            return VerificationReport(checks)
        sums = w[:, C].sum(axis=1) - 1.0
        zero_treated = np.abs(w[:, I]).max()
        checks["treated_columns_zero"] = (zero_treated <= 1e-12, float(zero_treated))
    else:
        shape_ok = w.shape == (n,)
        checks["weights_shape"] = (shape_ok, str(w.shape))
        if not shape_ok:
            return VerificationReport(checks)
        sums = np.array([w[I].sum() - 1.0, w[C].sum() - 1.0])
        if problem.variant is Variant.ONE_WAY:
            dev = np.abs(w[I] - 1.0 / I.size).max()
            checks["treated_equal"] = (dev <= 1e-12, float(dev))
    if cons.normalize:
        dev = float(np.abs(sums).max())
        checks["normalization"] = (dev <= 1e-8, dev)
    if cons.nonnegative:
        neg = float(np.maximum(-w, 0.0).max())
        checks["nonnegativity"] = (neg <= 1e-10, neg)
    attained = weight_objective(pre, treated, problem.lam, problem.variant, w)
    scale = max(1.0, abs(attained))
    gap = abs(attained - design.objective)
    checks["objective_recomputed"] = (gap <= 1e-10 * scale, gap)
    try:
        optimum = solve_weights(problem.variant, pre, treated, problem.lam, cons).objective
        gap = abs(attained - optimum)
        checks["objective_optimal"] = (gap <= 1e-10 * scale, gap)
        res = kkt_residual(design.weights, pre, treated, problem.lam, problem.variant, cons)
        checks["kkt"] = (res <= KKT_TOL, res)
    except WeightSolverError as exc:
        checks["kkt"] = (False, str(exc))
    return VerificationReport(checks)
