"""Simulation studies: RMSE of effect estimates across design methods, power curves, penalty selection."""

from __future__ import annotations

import csv
import enum
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .estimators import ALL_METHODS, Method, estimate
from .inference import Scheme, permutation_test
from .panel import Panel, TreatmentScenario, apply_treatment, subsample
from .selector import Design, DesignProblem, Mode, random_design, select_design
from .weights import Variant, WeightConstraints

log = logging.getLogger(__name__)

DEGENERATE_LAMBDA = 1e-8


class EffectMode(str, enum.Enum):
    HOMOGENEOUS = "homogeneous"
    HETEROGENEOUS = "heterogeneous"
    POWER = "power"

    @classmethod
    def parse(cls, value) -> "EffectMode":
        if isinstance(value, cls):
            return value
        key = str(value).lower()
        key = {"homogeneouslinear": "homogeneous", "heterogeneouslinear": "heterogeneous", "powerstudy": "power"}.get(key, key)
        return cls(key)


class LambdaRule(str, enum.Enum):
    VARIANCE = "variance"
    CV = "cv"
    FIXED = "fixed"


@dataclass(frozen=True)
class SimConfig:
    n_sims: int = 500
    sub_units: int = 10
    sub_periods: int = 10
    t_pre: int = 7
    K: int = 3
    effect_modes: tuple[EffectMode, ...] = (EffectMode.HOMOGENEOUS, EffectMode.HETEROGENEOUS)
    tau: float = 0.05
    methods: tuple[Method, ...] = ALL_METHODS
    lambda_rule: LambdaRule = LambdaRule.VARIANCE
    lambda_value: float | None = None
    cv_grid: tuple[float, ...] = ()
    cv_split: int | None = None
    cons: WeightConstraints = WeightConstraints()
    mode: Mode = Mode.AUTO
    seed: int = 0
    # power study
    tau_grid: tuple[float, ...] = (0.0, 0.01, 0.02, 0.04, 0.06)
    schemes: tuple[Scheme, ...] = (Scheme.IID, Scheme.MOVING_BLOCK)
    n_draws: int = 40
    alpha: float = 0.1
    workers: int = 1

    def __post_init__(self):
        modes = self.effect_modes
        if isinstance(modes, (str, EffectMode)):
            modes = (modes,)
        object.__setattr__(self, "effect_modes", tuple(EffectMode.parse(m) for m in modes))
        object.__setattr__(self, "methods", tuple(Method.parse(m) for m in self.methods))
        object.__setattr__(self, "schemes", tuple(Scheme.parse(s) for s in self.schemes))
        object.__setattr__(self, "lambda_rule", LambdaRule(self.lambda_rule))
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        if not self.sub_periods > self.t_pre:
            raise ValueError(f"sub_periods={self.sub_periods} must exceed t_pre={self.t_pre}")
        if not 1 <= self.K < self.sub_units:
            raise ValueError(f"K={self.K} must lie in [1, sub_units)")
        if self.lambda_rule is LambdaRule.FIXED and not (self.lambda_value and self.lambda_value > 0):
            raise ValueError("fixed lambda rule needs lambda_value > 0")

    def to_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            if isinstance(v, tuple):
                v = [x.value if isinstance(x, enum.Enum) else x for x in v]
            elif isinstance(v, enum.Enum):
                v = v.value
            elif isinstance(v, WeightConstraints):
                v = v.to_dict()
            out[k] = v
        return out


# --------------------------------------------------------------------------
# penalty selection


def select_lambda_variance(pre) -> float:
    """Mean over units of the per-unit population variance of pre-period outcomes."""
    pre = np.asarray(pre, dtype=float)
    return float(np.mean(np.var(pre, axis=1)))


def _validation_rmse(panel: Panel, problem: DesignProblem) -> float:
    design = select_design(panel, problem)
    method = {Variant.PER_UNIT: Method.PER_UNIT, Variant.TWO_WAY: Method.TWO_WAY, Variant.ONE_WAY: Method.ONE_WAY}[problem.variant]
    est = estimate(panel, design, method)
    if method is Method.PER_UNIT:
        return float(np.sqrt(np.mean(est.per_unit_period**2)))
    return float(np.sqrt(np.mean(est.per_period_atet**2)))


def select_lambda_cv(
    panel: Panel,
    grid: Sequence[float],
    split: int,
    K: int,
    variant=Variant.PER_UNIT,
    cons: WeightConstraints = WeightConstraints(),
    seed: int = 0,
    mode=Mode.AUTO,
) -> float:
    """Pick lambda by a simulated experiment inside the pre-period.

    The first ``split`` pre-periods train the design, the remaining pre-periods
    act as a placebo treated block with zero effect, and the validation RMSE
    of the variant's estimator decides. Ties go to the smaller lambda.
    """
    grid = sorted(float(g) for g in grid)
    if not grid:
        raise ValueError("empty lambda grid")
    if len(grid) == 1:
        return grid[0]
    if not 1 <= split < panel.t_pre:
        raise ValueError(f"split={split} must lie in [1, t_pre={panel.t_pre})")
    sub = Panel(panel.unit_ids, panel.period_ids[: panel.t_pre], panel.pre, split)
    best, best_score = grid[0], math.inf
    for lam in grid:
        score = _validation_rmse(sub, DesignProblem(variant, K, lam, cons, mode, seed=seed))
        if score < best_score:
            best, best_score = lam, score
    return best


def choose_lambda(panel: Panel, config: SimConfig, variant=Variant.PER_UNIT) -> float:
    if config.lambda_rule is LambdaRule.FIXED:
        return float(config.lambda_value)
    if config.lambda_rule is LambdaRule.CV:
        grid = config.cv_grid or tuple(variance_lambda(panel.pre) * f for f in (0.1, 0.3, 1.0, 3.0, 10.0))
        split = config.cv_split or max(1, panel.t_pre // 2)
        return select_lambda_cv(panel, grid, split, config.K, variant, config.cons, config.seed, config.mode)
    return variance_lambda(panel.pre)


def variance_lambda(pre) -> float:
    """Variance rule with degenerate (numerically constant) panels mapped to a small positive value."""
    lam = select_lambda_variance(pre)
    scale = float(np.abs(pre).max()) if np.size(pre) else 0.0
    if lam <= (1e-12 * scale) ** 2:
        log.warning("degenerate variance-based lambda %.3g replaced by %.0e", lam, DEGENERATE_LAMBDA)
        lam = DEGENERATE_LAMBDA
    return lam


# --------------------------------------------------------------------------
# one simulated experiment


def effects_for(mode: EffectMode, n: int, treated: Sequence[int], tau: float) -> np.ndarray:
    """Per-unit effect vector (zero for untreated units under the power convention)."""
    if mode is EffectMode.HOMOGENEOUS:
        return np.full(n, tau)
    if mode is EffectMode.HETEROGENEOUS:
        return np.linspace(0.0, 2.0 * tau, n)
    eff = np.zeros(n)
    treated = sorted(treated)
    eff[treated] = np.linspace(0.0, tau, len(treated)) if len(treated) > 1 else tau
    return eff


def _designs(sub: Panel, config: SimConfig, sim: int) -> tuple[dict[Method, Design], dict[Method, float]]:
    designs, lams = {}, {}
    for m_idx, method in enumerate(config.methods):
        if method.randomized:
            seed = np.random.SeedSequence([config.seed, sim, 1000 + m_idx])
            designs[method] = random_design(sub.n_units, config.K, np.random.default_rng(seed))
            lams[method] = choose_lambda(sub, config, Variant.PER_UNIT)
            continue
        lam = choose_lambda(sub, config, method.variant)
        problem = DesignProblem(method.variant, config.K, lam, config.cons, config.mode, seed=config.seed + sim)
        designs[method] = select_design(sub, problem)
        lams[method] = lam
    return designs, lams


def _sub_panel(source: Panel, config: SimConfig, sim: int) -> Panel:
    return subsample(source, config.sub_units, config.sub_periods, np.random.default_rng([config.seed, sim]), t_pre=config.t_pre)


def _rmse_one(args):
    source, config, sim = args
    sub = _sub_panel(source, config, sim)
    designs, lams = _designs(sub, config, sim)
    out = []
    for mode in config.effect_modes:
        for method in config.methods:
            design = designs[method]
            eff = effects_for(mode, sub.n_units, design.treated, config.tau)
            treated_panel = apply_treatment(sub, design.D, TreatmentScenario(eff, sub.n_post))
            est = estimate(treated_panel, design, method, lams[method], config.cons)
            I = np.array(design.treated)
            true_unit = eff[I]
            atet_err = est.per_period_atet - true_unit.mean()
            unit_err = est.per_unit_period - true_unit[:, None]
            out.append(
                (
                    mode,
                    method,
                    float(np.sqrt(np.mean(atet_err**2))),
                    float(np.sqrt(np.mean(unit_err**2))),
                    design.treated,
                )
            )
    return sim, out


@dataclass
class SimulationReport:
    """Per-method results. RMSE rows: effect_mode, K, method, atet_rmse, unit_rmse.

    Power rows: scheme, method, tau, rejection_rate.
    """

    config: dict
    source: str
    rmse_rows: list[dict] = field(default_factory=list)
    power_rows: list[dict] = field(default_factory=list)
    per_sim: list[dict] = field(default_factory=list)

    def rmse(self, method, mode, metric: str = "atet_rmse") -> float:
        method, mode = Method.parse(method), EffectMode.parse(mode)
        for r in self.rmse_rows:
            if r["method"] == method.value and r["effect_mode"] == mode.value:
                return r[metric]
        raise KeyError((method, mode))

    def rejection(self, method, scheme, tau: float) -> float:
        method, scheme = Method.parse(method), Scheme.parse(scheme)
        for r in self.power_rows:
            if r["method"] == method.value and r["scheme"] == scheme.value and r["tau"] == tau:
                return r["rejection_rate"]
        raise KeyError((method, scheme, tau))

    def rmse_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["effect_mode", "K", "method", "metric", "value", "n_sims"])
        for r in self.rmse_rows:
            for metric in ("atet_rmse", "unit_rmse"):
                w.writerow([r["effect_mode"], r["K"], r["method"], metric, repr(r[metric]), r["n_sims"]])
        return buf.getvalue()

    def power_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scheme", "method", "tau", "atet", "rejection_rate", "n_sims"])
        for r in self.power_rows:
            w.writerow([r["scheme"], r["method"], repr(r["tau"]), repr(r["atet"]), repr(r["rejection_rate"]), r["n_sims"]])
        return buf.getvalue()


def _map(fn, jobs, workers: int):
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def run_rmse_experiment(source: Panel, config: SimConfig, source_name: str = "panel") -> SimulationReport:
    """Average per-simulation RMSE of ATET and unit-level estimates for every method and effect mode."""
    if config.sub_units > source.n_units or config.sub_periods > source.n_periods:
        raise ValueError("subsample larger than source panel")
    results = _map(_rmse_one, [(source, config, s) for s in range(config.n_sims)], config.workers)
    results.sort(key=lambda r: r[0])
    acc: dict[tuple, list] = {}
    per_sim = []
    for sim, rows in results:
        for mode, method, a, u, treated in rows:
            acc.setdefault((mode, method), []).append((a, u))
            per_sim.append({"sim": sim, "effect_mode": mode.value, "method": method.value, "atet_rmse": a, "unit_rmse": u, "treated": list(treated)})
    report = SimulationReport(config.to_dict(), source_name, per_sim=per_sim)
    for mode in config.effect_modes:
        for method in config.methods:
            vals = np.array(acc[(mode, method)])
            report.rmse_rows.append(
                {
                    "effect_mode": mode.value,
                    "K": config.K,
                    "method": method.value,
                    "atet_rmse": float(vals[:, 0].mean()),
                    "unit_rmse": float(vals[:, 1].mean()),
                    "n_sims": int(vals.shape[0]),
                }
            )
    return report


def power_config(**overrides) -> SimConfig:
    """Defaults of the power study: 10 random units, all 40 periods, last 5 treated, K=3."""
    base = dict(
        n_sims=100,
        sub_units=10,
        sub_periods=40,
        t_pre=35,
        K=3,
        effect_modes=(EffectMode.POWER,),
        n_draws=40,
        alpha=0.1,
    )
    base.update(overrides)
    return SimConfig(**base)


def _power_one(args):
    source, config, sim = args
    sub = _sub_panel(source, config, sim)
    designs, lams = _designs(sub, config, sim)
    out = []
    for tau in config.tau_grid:
        for method in config.methods:
            design = designs[method]
            eff = effects_for(EffectMode.POWER, sub.n_units, design.treated, tau)
            treated_panel = apply_treatment(sub, design.D, TreatmentScenario(eff, sub.n_post))
            for scheme in config.schemes:
                test = permutation_test(
                    treated_panel,
                    design,
                    method,
                    scheme,
                    config.n_draws,
                    config.alpha,
                    seed=int(np.random.SeedSequence([config.seed, sim]).generate_state(1)[0]),
                    lam=lams[method],
                    cons=config.cons,
                )
                out.append((tau, method, scheme, test.reject, test.p_value))
    return sim, out


def run_power_experiment(source: Panel, config: SimConfig, source_name: str = "panel") -> SimulationReport:
    """Rejection rate of the permutation test versus effect size, per method and scheme."""
    if config.sub_units > source.n_units or config.sub_periods > source.n_periods:
        raise ValueError("subsample larger than source panel")
    results = _map(_power_one, [(source, config, s) for s in range(config.n_sims)], config.workers)
    results.sort(key=lambda r: r[0])
    acc: dict[tuple, list] = {}
    per_sim = []
    for sim, rows in results:
        for tau, method, scheme, rej, p in rows:
            acc.setdefault((scheme, method, tau), []).append(rej)
            per_sim.append({"sim": sim, "tau": tau, "method": method.value, "scheme": scheme.value, "reject": rej, "p_value": p})
    report = SimulationReport(config.to_dict(), source_name, per_sim=per_sim)
    for scheme in config.schemes:
        for method in config.methods:
            for tau in config.tau_grid:
                rej = acc[(scheme, method, tau)]
                report.power_rows.append(
                    {
                        "scheme": scheme.value,
                        "method": method.value,
                        "tau": float(tau),
                        "atet": float(tau) if config.K == 1 else float(tau) / 2.0,
                        "rejection_rate": float(np.mean(rej)),
                        "n_sims": len(rej),
                    }
                )
    return report
