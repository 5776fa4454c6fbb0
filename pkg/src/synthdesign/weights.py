"""Inner weight problems for a fixed treated set.

Every weight problem here is a strictly convex QP of the form

    minimize 0.5 x'Px + c'x + const
    s.t.     sum(x[g]) == 1 for each group g   (when normalizing)
             x >= 0                            (when sign-constrained)

solved by a primal active-set method over the nonnegativity bounds. Each
iteration solves the equality-constrained KKT system for the current working
set exactly, so the method terminates finitely and the returned point carries
a certifiable KKT residual.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

KKT_TOL = 1e-9
FEAS_TOL = 1e-10


class Variant(str, enum.Enum):
    PER_UNIT = "per-unit"
    ONE_WAY = "one-way"
    TWO_WAY = "two-way"

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("_", "-")
        aliases = {"perunit": "per-unit", "oneway": "one-way", "twoway": "two-way"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown variant {value!r}; expected one of {[v.value for v in cls]}") from None


class WeightSolverError(RuntimeError):
    """Raised when the active-set iteration budget is exhausted or inputs are invalid."""


@dataclass(frozen=True)
class WeightConstraints:
    nonnegative: bool = True
    normalize: bool = True
    treated_equal: bool = False

    def to_dict(self) -> dict:
        return {"nonnegative": self.nonnegative, "normalize": self.normalize, "treated_equal": self.treated_equal}


@dataclass
class WeightSolution:
    """Fitted weights plus solver diagnostics.

    ``weights`` is a length-N vector for the global variants and a K x N
    matrix for the per-unit variant (row r belongs to the r-th treated unit in
    ascending index order; treated columns are zero).
    """

    weights: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int


# --------------------------------------------------------------------------
# generic QP machinery


def _solve_eqp(P, g, A, free):
    """Step p on the free set minimizing 0.5 p'Pp + g'p with A p = 0; returns (p, nu).

    nu is the multiplier vector of the equality rows in the convention
    grad = A' nu + mu.
    """
    n = P.shape[0]
    F = np.flatnonzero(free)
    m = A.shape[0]
    AF = A[:, F]
    kkt = np.zeros((F.size + m, F.size + m))
    kkt[: F.size, : F.size] = P[np.ix_(F, F)]
    kkt[: F.size, F.size :] = AF.T
    kkt[F.size :, : F.size] = AF
    rhs = np.concatenate([-g[F], np.zeros(m)])
    try:
        sol = np.linalg.solve(kkt, rhs)
        if not np.all(np.isfinite(sol)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    p = np.zeros(n)
    p[F] = sol[: F.size]
    # KKT rows: P p + A' y = -g  => grad at x+p is -A'y, so nu = -y
    nu = -sol[F.size :]
    return p, nu


def _feasible_start(n, groups, normalize):
    x = np.zeros(n)
    if normalize:
        for g in groups:
            x[g] = 1.0 / len(g)
    return x


def solve_qp(
    P: np.ndarray,
    c: np.ndarray,
    groups: Sequence[np.ndarray],
    *,
    nonnegative: bool,
    normalize: bool,
    x0: np.ndarray | None = None,
    max_iter: int | None = None,
) -> tuple[np.ndarray, int]:
    """Minimize 0.5 x'Px + c'x under group-sum and optional sign constraints.

    Returns the minimizer and the number of active-set iterations. ``x0`` must
    be feasible if given. Raises WeightSolverError when more than
    ``max_iter`` (default 10 n) iterations are needed.
    """
    n = P.shape[0]
    A = _group_matrix(n, groups) if normalize else np.zeros((0, n))
    if max_iter is None:
        max_iter = 10 * n
    x = _feasible_start(n, groups, normalize) if x0 is None else np.array(x0, dtype=float)
    if x.shape != (n,):
        raise WeightSolverError(f"start point has shape {x.shape}, expected ({n},)")

    if not nonnegative:
        p, _ = _solve_eqp(P, P @ x + c, A, np.ones(n, bool))
        return x + p, 1

    if np.any(x < 0):
        raise WeightSolverError("start point violates nonnegativity")
    scale = max(np.abs(P).max(initial=0.0), np.abs(c).max(initial=0.0), 1e-300)
    working = x <= 0.0
    x[working] = 0.0
    for it in range(1, max_iter + 1):
        g = P @ x + c
        p, nu = _solve_eqp(P, g, A, ~working)
        if np.abs(p).max(initial=0.0) <= 1e-13 * max(1.0, np.abs(x).max()):
            if not working.any():
                return x, it
            mu = g - A.T @ nu
            W = np.flatnonzero(working)
            mu_w = mu[W]
            worst = mu_w.min()
            if worst >= -1e-12 * scale:
                x[working] = 0.0
                return x, it
            # most negative multiplier; smallest index on ties (argmin picks first)
            working[W[int(np.argmin(mu_w))]] = False
            continue
        alpha = 1.0
        block = -1
        neg = np.flatnonzero((~working) & (p < 0))
        if neg.size:
            ratios = -x[neg] / p[neg]
            r = int(np.argmin(ratios))
            if ratios[r] < 1.0:
                alpha = max(float(ratios[r]), 0.0)
                block = int(neg[r])
        x = x + alpha * p
        if block >= 0:
            x[block] = 0.0
            working[block] = True
        np.maximum(x, 0.0, out=x)
    raise WeightSolverError(f"active-set solver did not converge within {max_iter} iterations")


def qp_kkt_residual(
    P: np.ndarray,
    c: np.ndarray,
    groups: Sequence[np.ndarray],
    x: np.ndarray,
    *,
    nonnegative: bool,
    normalize: bool,
) -> float:
    """Max-norm of stationarity, dual-sign, complementarity and feasibility violations."""
    n = P.shape[0]
    A = _group_matrix(n, groups) if normalize else np.zeros((0, n))
    b = np.ones(A.shape[0])
    x = np.asarray(x, dtype=float)
    g = P @ x + c
    feas = np.abs(A @ x - b).max(initial=0.0)
    if not nonnegative:
        nu = np.linalg.lstsq(A.T, g, rcond=None)[0] if A.shape[0] else np.zeros(0)
        return float(max(np.abs(g - A.T @ nu).max(initial=0.0), feas))
    feas = max(feas, np.maximum(-x, 0.0).max(initial=0.0))
    active = x <= 1e-12
    free = ~active
    if A.shape[0] and free.any():
        nu = np.linalg.lstsq(A[:, free].T, g[free], rcond=None)[0]
    else:
        nu = np.zeros(A.shape[0])
    mu = g - A.T @ nu
    stat = np.abs(mu[free]).max(initial=0.0)
    dual = np.maximum(-mu[active], 0.0).max(initial=0.0)
    comp = np.abs(mu[active] * x[active]).max(initial=0.0)
    return float(max(stat, dual, comp, feas))


def _group_matrix(n, groups):
    A = np.zeros((len(groups), n))
    for r, g in enumerate(groups):
        A[r, g] = 1.0
    return A


# --------------------------------------------------------------------------
# problem builders


def _split(pre, treated):
    pre = np.asarray(pre, dtype=float)
    if pre.ndim == 1:
        pre = pre[:, None]
    n = pre.shape[0]
    idx = np.unique(np.asarray(list(treated), dtype=int))
    if idx.size != len(list(treated)):
        raise WeightSolverError("treated set contains duplicates")
    if idx.size == 0 or idx.size >= n:
        raise WeightSolverError(f"treated set must have between 1 and {n - 1} units, got {idx.size}")
    if idx[0] < 0 or idx[-1] >= n:
        raise WeightSolverError("treated index out of range")
    mask = np.zeros(n, bool)
    mask[idx] = True
    return pre, idx, np.flatnonzero(~mask)


def _check_lambda(lam, cons):
    if lam < 0 or (lam == 0 and cons.nonnegative):
        raise WeightSolverError(f"lambda must be > 0 for the sign-constrained solver, got {lam}")


def _donor_qp(pre, controls, lam):
    Yc = pre[controls]
    T = pre.shape[1]
    P = 2.0 * (Yc @ Yc.T / T + lam * np.eye(controls.size))
    return P, Yc, T


def _random_simplex(rng, k):
    return rng.dirichlet(np.ones(k))


def solve_two_way_weights(pre, treated, lam: float, cons: WeightConstraints = WeightConstraints(), *, x0=None) -> WeightSolution:
    """Fit treated and control weights jointly (two-way global problem)."""
    if cons.treated_equal:
        return solve_one_way_weights(pre, treated, lam, cons)
    pre, I, C = _split(pre, treated)
    _check_lambda(lam, cons)
    n, T = pre.shape
    sign = np.full(n, -1.0)
    sign[I] = 1.0
    M = sign[:, None] * pre
    P = 2.0 * (M @ M.T / T + lam * np.eye(n))
    c = np.zeros(n)
    groups = [I, C]
    w, it = solve_qp(P, c, groups, nonnegative=cons.nonnegative, normalize=cons.normalize, x0=x0)
    kkt = qp_kkt_residual(P, c, groups, w, nonnegative=cons.nonnegative, normalize=cons.normalize)
    obj = weight_objective(pre, I, lam, Variant.TWO_WAY, w)
    return WeightSolution(w, obj, kkt, it)


def solve_one_way_weights(pre, treated, lam: float, cons: WeightConstraints = WeightConstraints(), *, x0=None) -> WeightSolution:
    """Fit control weights against the equally weighted treated average (one-way global problem).

    ``x0``, if given, is a feasible start over the control units only.
    """
    pre, I, C = _split(pre, treated)
    _check_lambda(lam, cons)
    n = pre.shape[0]
    P, Yc, T = _donor_qp(pre, C, lam)
    target = pre[I].mean(axis=0)
    c = -2.0 * Yc @ target / T
    groups = [np.arange(C.size)]
    x, it = solve_qp(P, c, groups, nonnegative=cons.nonnegative, normalize=cons.normalize, x0=x0)
    kkt = qp_kkt_residual(P, c, groups, x, nonnegative=cons.nonnegative, normalize=cons.normalize)
    w = np.zeros(n)
    w[I] = 1.0 / I.size
    w[C] = x
    obj = weight_objective(pre, I, lam, Variant.ONE_WAY, w)
    return WeightSolution(w, obj, kkt, it)


def solve_per_unit_weights(pre, treated, lam: float, cons: WeightConstraints = WeightConstraints(), *, x0=None) -> WeightSolution:
    """One synthetic-control weight row per treated unit, all over the same donor pool.

    Rows follow ascending treated index. Without sign constraints all rows
    share one KKT matrix and are solved in a single factorization.
    """
    pre, I, C = _split(pre, treated)
    _check_lambda(lam, cons)
    n = pre.shape[0]
    P, Yc, T = _donor_qp(pre, C, lam)
    groups = [np.arange(C.size)]
    W = np.zeros((I.size, n))
    total_it = 0
    kkt = 0.0
    if not cons.nonnegative and x0 is None:
        # shared factorization across rows
        A = _group_matrix(C.size, groups) if cons.normalize else np.zeros((0, C.size))
        m = A.shape[0]
        kkt_mat = np.zeros((C.size + m, C.size + m))
        kkt_mat[: C.size, : C.size] = P
        kkt_mat[: C.size, C.size :] = A.T
        kkt_mat[C.size :, : C.size] = A
        start = _feasible_start(C.size, groups, cons.normalize)
        C_rhs = -2.0 * Yc @ pre[I].T / T  # columns = linear terms per row
        G = P @ start[:, None] + C_rhs
        rhs = np.vstack([-G, np.zeros((m, I.size))])
        try:
            sol = np.linalg.solve(kkt_mat, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(kkt_mat, rhs, rcond=None)[0]
        X = start[:, None] + sol[: C.size]
        for r in range(I.size):
            W[r, C] = X[:, r]
            kkt = max(kkt, qp_kkt_residual(P, C_rhs[:, r], groups, X[:, r], nonnegative=False, normalize=cons.normalize))
        total_it = 1
    else:
        for r, i in enumerate(I):
            c = -2.0 * Yc @ pre[i] / T
            start = None if x0 is None else np.asarray(x0)[r]
            x, it = solve_qp(P, c, groups, nonnegative=cons.nonnegative, normalize=cons.normalize, x0=start)
            W[r, C] = x
            total_it += it
            kkt = max(kkt, qp_kkt_residual(P, c, groups, x, nonnegative=cons.nonnegative, normalize=cons.normalize))
    obj = weight_objective(pre, I, lam, Variant.PER_UNIT, W)
    return WeightSolution(W, obj, kkt, total_it)


SOLVERS = {
    Variant.PER_UNIT: solve_per_unit_weights,
    Variant.ONE_WAY: solve_one_way_weights,
    Variant.TWO_WAY: solve_two_way_weights,
}


def solve_weights(variant, pre, treated, lam: float, cons: WeightConstraints = WeightConstraints(), **kw) -> WeightSolution:
    return SOLVERS[Variant.parse(variant)](pre, treated, lam, cons, **kw)


def weight_objective(pre, treated, lam: float, variant, weights) -> float:
    """Objective value attained by given weights (fit averaged over periods, plus ridge penalty).

    Per-unit values are averaged over treated units; the penalty there covers
    the donor weights only.
    """
    variant = Variant.parse(variant)
    pre = np.asarray(pre, dtype=float)
    if pre.ndim == 1:
        pre = pre[:, None]
    n, T = pre.shape
    I = np.sort(np.asarray(list(treated), dtype=int))
    D = np.zeros(n, bool)
    D[I] = True
    weights = np.asarray(weights, dtype=float)
    if variant is Variant.PER_UNIT:
        W = weights * (~D)[None, :]
        resid = pre[I] - W @ pre
        fit = np.sum(resid**2) / (I.size * T)
        pen = lam * np.sum(weights**2) / I.size
        return float(fit + pen)
    sign = np.where(D, 1.0, -1.0)
    gap = (sign * weights) @ pre
    return float(np.sum(gap**2) / T + lam * np.sum(weights**2))


def kkt_residual(solution: WeightSolution, pre, treated, lam: float, variant, cons: WeightConstraints = WeightConstraints()) -> float:
    """KKT residual of ``solution`` for the weight problem given by the remaining arguments."""
    variant = Variant.parse(variant)
    if cons.treated_equal and variant is Variant.TWO_WAY:
        variant = Variant.ONE_WAY
    pre, I, C = _split(pre, treated)
    n, T = pre.shape
    w = np.asarray(solution.weights, dtype=float)
    kw = dict(nonnegative=cons.nonnegative, normalize=cons.normalize)
    if variant is Variant.TWO_WAY:
        sign = np.full(n, -1.0)
        sign[I] = 1.0
        M = sign[:, None] * pre
        P = 2.0 * (M @ M.T / T + lam * np.eye(n))
        return qp_kkt_residual(P, np.zeros(n), [I, C], w, **kw)
    P, Yc, _ = _donor_qp(pre, C, lam)
    groups = [np.arange(C.size)]
    if variant is Variant.ONE_WAY:
        res = np.abs(w[I] - 1.0 / I.size).max()
        c = -2.0 * Yc @ pre[I].mean(axis=0) / T
        return float(max(res, qp_kkt_residual(P, c, groups, w[C], **kw)))
    if w.shape != (I.size, n):
        raise WeightSolverError(f"per-unit weights have shape {w.shape}, expected {(I.size, n)}")
    res = np.abs(w[:, I]).max(initial=0.0)
    for r, i in enumerate(I):
        c = -2.0 * Yc @ pre[i] / T
        res = max(res, qp_kkt_residual(P, c, groups, w[r, C], **kw))
    return float(res)


def random_feasible_start(rng: np.random.Generator, variant, n: int, treated) -> np.ndarray:
    """Random strictly positive feasible point for the given variant's QP variables."""
    variant = Variant.parse(variant)
    I = np.sort(np.asarray(list(treated), dtype=int))
    mask = np.zeros(n, bool)
    mask[I] = True
    C = np.flatnonzero(~mask)
    if variant is Variant.TWO_WAY:
        x = np.zeros(n)
        x[I] = _random_simplex(rng, I.size)
        x[C] = _random_simplex(rng, C.size)
        return x
    if variant is Variant.ONE_WAY:
        return _random_simplex(rng, C.size)
    return np.vstack([_random_simplex(rng, C.size) for _ in I])


# --------------------------------------------------------------------------
# closed forms for a single pre-period with unconstrained signs


def _group_stats(a, treated):
    a = np.asarray(a, dtype=float).ravel()
    n = a.size
    I = np.sort(np.asarray(list(treated), dtype=int))
    mask = np.zeros(n, bool)
    mask[I] = True
    C = np.flatnonzero(~mask)
    if I.size == 0 or C.size == 0:
        raise WeightSolverError("closed forms need non-empty treated and control groups")
    mI, mC = a[I].mean(), a[C].mean()
    vI = float(np.sum((a[I] - mI) ** 2))
    vC = float(np.sum((a[C] - mC) ** 2))
    return a, I, C, mI, mC, vI, vC


def closed_form_two_way_weights(a, treated, sigma2: float) -> np.ndarray:
    a, I, C, mI, mC, vI, vC = _group_stats(a, treated)
    B = sigma2 + vI + vC
    gap = mI - mC
    w = np.empty(a.size)
    w[I] = 1.0 / I.size + gap * (mI - a[I]) / B
    w[C] = 1.0 / C.size - gap * (mC - a[C]) / B
    return w


def closed_form_one_way_weights(a, treated, sigma2: float) -> np.ndarray:
    a, I, C, mI, mC, vI, vC = _group_stats(a, treated)
    w = np.empty(a.size)
    w[I] = 1.0 / I.size
    w[C] = 1.0 / C.size - (mI - mC) * (mC - a[C]) / (sigma2 + vC)
    return w


def closed_form_per_unit_weights(a, treated, sigma2: float) -> np.ndarray:
    """K x N matrix; row r holds the donor weights of the r-th treated unit."""
    a, I, C, mI, mC, vI, vC = _group_stats(a, treated)
    W = np.zeros((I.size, a.size))
    for r, i in enumerate(I):
        W[r, C] = 1.0 / C.size - (a[i] - mC) * (mC - a[C]) / (sigma2 + vC)
    return W


def two_way_stationarity(a, treated, sigma2: float, w) -> float:
    """Residual of the two-way first-order conditions at ``w`` (multipliers eliminated per group)."""
    a, I, C, *_ = _group_stats(a, treated)
    w = np.asarray(w, dtype=float)
    gap = a[I] @ w[I] - a[C] @ w[C]
    gI = 2 * a[I] * gap + 2 * sigma2 * w[I]
    gC = -2 * a[C] * gap + 2 * sigma2 * w[C]
    res = max(np.ptp(gI), np.ptp(gC))
    return float(max(res, abs(w[I].sum() - 1), abs(w[C].sum() - 1)))
