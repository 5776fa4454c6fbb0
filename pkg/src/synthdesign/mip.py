"""Mixed-integer quadratic formulations of the design problems and a free-MPS writer/reader.

Dialect
-------
Free-format MPS. Binaries are wrapped in ``MARKER INTORG``/``INTEND`` blocks
and also carry ``BV`` bounds. The quadratic objective is a ``QMATRIX``
section listing both triangles of Q with objective ``c'x + 0.5 x'Qx``.
Quadratic constraints (K-free per-unit variant only) use ``QCMATRIX`` whose
entries follow the constraint convention ``a'x + x'Qx`` (no 0.5 factor).
Numbers are written with ``repr`` so values round-trip bit-exactly.

Variable names (0-based indices): per-unit ``D_i``, ``W_i_j``, ``Q_i_j``,
``Z_i_t`` (+ ``Y`` in the K-free variant); global ``D_i``, ``W_i``, ``Q_i``,
``Z_t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .panel import Panel
from .selector import Design, DesignProblem
from .weights import Variant

INF = float("inf")


class MipExportError(ValueError):
    pass


@dataclass
class Variable:
    name: str
    lb: float = 0.0
    ub: float = INF
    binary: bool = False


@dataclass
class Row:
    name: str
    sense: str  # "E", "L" or "G"
    coefs: dict[str, float]
    rhs: float = 0.0
    quad: dict[tuple[str, str], float] = field(default_factory=dict)


@dataclass
class MipModel:
    """Objective is ``const + sum(c x) + sum(q_ab x_a x_b)`` over the listed quadratic terms."""

    name: str
    variables: list[Variable]
    rows: list[Row]
    obj_linear: dict[str, float] = field(default_factory=dict)
    obj_quad: dict[tuple[str, str], float] = field(default_factory=dict)
    obj_constant: float = 0.0

    def counts(self) -> dict[str, int]:
        out = {"binary": 0, "continuous": 0, "free": 0}
        for v in self.variables:
            if v.binary:
                out["binary"] += 1
            elif v.lb == -INF:
                out["free"] += 1
            else:
                out["continuous"] += 1
        return out

    def prefix_count(self, prefix: str) -> int:
        return sum(1 for v in self.variables if v.name.split("_")[0] == prefix)

    def row(self, name: str) -> Row:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def objective(self, x: dict[str, float]) -> float:
        val = self.obj_constant
        val += sum(c * x[n] for n, c in self.obj_linear.items())
        val += sum(q * x[a] * x[b] for (a, b), q in self.obj_quad.items())
        return float(val)

    def violations(self, x: dict[str, float]) -> dict[str, float]:
        """Positive violation amounts of bounds, integrality and rows; empty when feasible."""
        out = {}
        for v in self.variables:
            val = x[v.name]
            viol = max(v.lb - val, val - v.ub, 0.0)
            if v.binary:
                viol = max(viol, min(abs(val), abs(val - 1.0)))
            if viol > 0:
                out[v.name] = viol
        for r in self.rows:
            lhs = sum(c * x[n] for n, c in r.coefs.items())
            lhs += sum(q * x[a] * x[b] for (a, b), q in r.quad.items())
            d = lhs - r.rhs
            viol = abs(d) if r.sense == "E" else max(d, 0.0) if r.sense == "L" else max(-d, 0.0)
            if viol > 0:
                out[r.name] = viol
        return out


def _check(panel: Panel, problem: DesignProblem):
    if not (problem.cons.nonnegative and problem.cons.normalize):
        raise MipExportError("MIP export covers the sign-constrained, normalized weight problems only")
    n = panel.n_units
    if not 1 <= problem.K <= n - 1:
        raise MipExportError(f"K={problem.K} must lie in [1, {n - 1}]")


def export_mip(panel: Panel, problem: DesignProblem, k_free: bool = False) -> MipModel:
    """Build the linearized mixed-integer model for the problem's variant on the panel's pre-period.

    ``k_free`` drops the cardinality row. For the per-unit variant this uses
    an epigraph variable ``Y`` with a quadratic constraint; the one-way
    variant has no K-free linearization here and is rejected.
    """
    _check(panel, problem)
    if problem.variant is Variant.PER_UNIT:
        return _per_unit_model(panel.pre, problem, k_free)
    if k_free and problem.variant is Variant.ONE_WAY:
        raise MipExportError("K-free export is unsupported for the one-way variant")
    return _global_model(panel.pre, problem, k_free)


def _per_unit_model(Y: np.ndarray, problem: DesignProblem, k_free: bool) -> MipModel:
    n, T = Y.shape
    K, lam = problem.K, problem.lam
    D = [f"D_{i}" for i in range(n)]
    W = [[f"W_{i}_{j}" for j in range(n)] for i in range(n)]
    Q = [[f"Q_{i}_{j}" for j in range(n)] for i in range(n)]
    Z = [[f"Z_{i}_{t}" for t in range(T)] for i in range(n)]
    variables = [Variable(d, 0.0, 1.0, True) for d in D]
    variables += [Variable(w) for row in W for w in row]
    variables += [Variable(q) for row in Q for q in row]
    variables += [Variable(z, -INF, INF) for row in Z for z in row]
    rows: list[Row] = []
    if k_free:
        rows.append(Row("CARDMIN", "G", {d: 1.0 for d in D}, 1.0))
    else:
        rows.append(Row("CARD", "E", {d: 1.0 for d in D}, float(K)))
    for i in range(n):
        coefs = {Q[i][j]: 1.0 for j in range(n)}
        coefs[D[i]] = -1.0
        rows.append(Row(f"QSUM_{i}", "E", coefs, 0.0))
    for i in range(n):
        for j in range(n):
            rows.append(Row(f"QUB1_{i}_{j}", "L", {Q[i][j]: 1.0, D[j]: 1.0}, 1.0))
            rows.append(Row(f"QUB2_{i}_{j}", "L", {Q[i][j]: 1.0, W[i][j]: -1.0}, 0.0))
            rows.append(Row(f"QLB_{i}_{j}", "G", {Q[i][j]: 1.0, W[i][j]: -1.0, D[j]: 1.0}, 0.0))
            rows.append(Row(f"WUB_{i}_{j}", "L", {W[i][j]: 1.0, D[i]: -1.0}, 0.0))
    for i in range(n):
        for t in range(T):
            coefs = {Z[i][t]: 1.0}
            coefs[D[i]] = coefs.get(D[i], 0.0) - float(Y[i, t])
            for j in range(n):
                coefs[Q[i][j]] = float(Y[j, t])
            rows.append(Row(f"ZDEF_{i}_{t}", "E", coefs, 0.0))
    fit = {(z, z): 1.0 / T for row in Z for z in row}
    pen = {(w, w): lam for row in W for w in row}
    if k_free:
        variables.append(Variable("Y", 0.0, INF))
        quad = {**fit, **pen}
        for d in D:
            quad[(d, "Y")] = -1.0
        rows.append(Row("EPI", "L", {}, 0.0, quad))
        return MipModel("perunit_kfree", variables, rows, obj_linear={"Y": 1.0})
    obj_quad = {k: v / K for k, v in {**fit, **pen}.items()}
    return MipModel("perunit", variables, rows, obj_quad=obj_quad)


def _global_model(Y: np.ndarray, problem: DesignProblem, k_free: bool) -> MipModel:
    n, T = Y.shape
    K, lam = problem.K, problem.lam
    D = [f"D_{i}" for i in range(n)]
    W = [f"W_{i}" for i in range(n)]
    Q = [f"Q_{i}" for i in range(n)]
    Z = [f"Z_{t}" for t in range(T)]
    variables = [Variable(d, 0.0, 1.0, True) for d in D]
    variables += [Variable(w) for w in W] + [Variable(q) for q in Q]
    variables += [Variable(z, -INF, INF) for z in Z]
    rows: list[Row] = []
    if not k_free:
        rows.append(Row("CARD", "E", {d: 1.0 for d in D}, float(K)))
    rows.append(Row("QSUM", "E", {q: 1.0 for q in Q}, 1.0))
    rows.append(Row("WSUM", "E", {w: 1.0 for w in W}, 2.0))
    for i in range(n):
        rows.append(Row(f"QUB1_{i}", "L", {Q[i]: 1.0, D[i]: -1.0}, 0.0))
        rows.append(Row(f"QUB2_{i}", "L", {Q[i]: 1.0, W[i]: -1.0}, 0.0))
        rows.append(Row(f"QLB_{i}", "G", {Q[i]: 1.0, W[i]: -1.0, D[i]: -1.0}, -1.0))
    if problem.variant is Variant.ONE_WAY:
        for i in range(n):
            rows.append(Row(f"QFIX_{i}", "E", {Q[i]: 1.0, D[i]: -1.0 / K}, 0.0))
    # treated-minus-control gap: sum_i (2 q_i - w_i) Y_it
    for t in range(T):
        coefs = {Z[t]: 1.0}
        for i in range(n):
            coefs[Q[i]] = -2.0 * float(Y[i, t])
            coefs[W[i]] = float(Y[i, t])
        rows.append(Row(f"ZDEF_{t}", "E", coefs, 0.0))
    obj_quad = {(z, z): 1.0 / T for z in Z}
    obj_quad.update({(w, w): lam for w in W})
    name = "oneway" if problem.variant is Variant.ONE_WAY else "twoway"
    return MipModel(name + ("_kfree" if k_free else ""), variables, rows, obj_quad=obj_quad)


def mip_assignment(panel: Panel, problem: DesignProblem, design: Design) -> dict[str, float]:
    """Model variable values corresponding to a design's indicator and weights."""
    Y = panel.pre
    n, T = Y.shape
    D = np.asarray(design.D, dtype=float)
    w = np.asarray(design.weights.weights, dtype=float)
    x = {f"D_{i}": float(D[i]) for i in range(n)}
    if problem.variant is Variant.PER_UNIT:
        Wfull = np.zeros((n, n))
        Wfull[np.flatnonzero(D)] = w
        Wfull *= (1.0 - D)[None, :]
        for i in range(n):
            for j in range(n):
                x[f"W_{i}_{j}"] = float(Wfull[i, j])
                x[f"Q_{i}_{j}"] = float(Wfull[i, j] * (1.0 - D[j]))
        Z = D[:, None] * Y - Wfull @ Y
        for i in range(n):
            for t in range(T):
                x[f"Z_{i}_{t}"] = float(Z[i, t])
        return x
    for i in range(n):
        x[f"W_{i}"] = float(w[i])
        x[f"Q_{i}"] = float(w[i] * D[i])
    Z = (2.0 * w * D - w) @ Y
    for t in range(T):
        x[f"Z_{t}"] = float(Z[t])
    return x


# --------------------------------------------------------------------------
# MPS text


def _fmt(v: float) -> str:
    return repr(float(v))


def to_mps(model: MipModel) -> str:
    lines = [f"NAME {model.name}", "OBJSENSE", "    MIN", "ROWS", " N OBJ"]
    for r in model.rows:
        lines.append(f" {r.sense} {r.name}")
    col_entries: dict[str, list[tuple[str, float]]] = {v.name: [] for v in model.variables}
    for n, c in model.obj_linear.items():
        col_entries[n].append(("OBJ", c))
    for r in model.rows:
        for n, c in r.coefs.items():
            if c != 0.0:
                col_entries[n].append((r.name, c))
    lines.append("COLUMNS")
    in_int = False
    marker = 0
    for v in model.variables:
        if v.binary and not in_int:
            lines.append(f"    MARKER{marker} 'MARKER' 'INTORG'")
            in_int = True
        elif not v.binary and in_int:
            lines.append(f"    MARKER{marker} 'MARKER' 'INTEND'")
            marker += 1
            in_int = False
        entries = col_entries[v.name]
        if not entries:
            lines.append(f"    {v.name} OBJ 0.0")
        for rname, c in entries:
            lines.append(f"    {v.name} {rname} {_fmt(c)}")
    if in_int:
        lines.append(f"    MARKER{marker} 'MARKER' 'INTEND'")
    lines.append("RHS")
    for r in model.rows:
        if r.rhs != 0.0:
            lines.append(f"    RHS {r.name} {_fmt(r.rhs)}")
    if model.obj_constant:
        lines.append(f"    RHS OBJ {_fmt(-model.obj_constant)}")
    lines.append("BOUNDS")
    for v in model.variables:
        if v.binary:
            lines.append(f" BV BND {v.name}")
        elif v.lb == -INF and v.ub == INF:
            lines.append(f" FR BND {v.name}")
        else:
            if v.lb != 0.0:
                lines.append(f" LO BND {v.name} {_fmt(v.lb)}")
            if v.ub != INF:
                lines.append(f" UP BND {v.name} {_fmt(v.ub)}")
    if model.obj_quad:
        lines.append("QMATRIX")
        lines.extend(_qmatrix_lines(model.obj_quad, half=True))
    for r in model.rows:
        if r.quad:
            lines.append(f"QCMATRIX {r.name}")
            lines.extend(_qmatrix_lines(r.quad, half=False))
    lines.append("ENDATA")
    return "\n".join(lines) + "\n"


def _qmatrix_lines(terms: dict[tuple[str, str], float], half: bool):
    """Full symmetric listing of the matrix representing ``sum q_ab x_a x_b``."""
    entries: dict[tuple[str, str], float] = {}
    for (a, b), q in terms.items():
        if a == b:
            entries[(a, a)] = entries.get((a, a), 0.0) + (2.0 * q if half else q)
        else:
            val = q if half else q / 2.0
            entries[(a, b)] = entries.get((a, b), 0.0) + val
            entries[(b, a)] = entries.get((b, a), 0.0) + val
    return [f"    {a} {b} {_fmt(v)}" for (a, b), v in entries.items()]


def read_mps(text: str) -> MipModel:
    """Parse the dialect written by :func:`to_mps` back into a model."""
    name = ""
    section = None
    rows: dict[str, Row] = {}
    row_order: list[str] = []
    variables: dict[str, Variable] = {}
    obj_linear: dict[str, float] = {}
    obj_quad: dict[tuple[str, str], float] = {}
    obj_const = 0.0
    in_int = False
    qc_row = None
    for raw in text.splitlines():
        if not raw.strip() or raw.startswith("*"):
            continue
        tok = raw.split()
        if not raw[0].isspace():
            section = tok[0]
            if section == "NAME":
                name = tok[1] if len(tok) > 1 else ""
            elif section == "QCMATRIX":
                qc_row = rows[tok[1]]
            elif section == "ENDATA":
                break
            continue
        if section == "ROWS":
            sense, rname = tok
            if sense != "N":
                rows[rname] = Row(rname, sense, {}, 0.0)
                row_order.append(rname)
        elif section == "COLUMNS":
            if len(tok) == 3 and tok[1] == "'MARKER'":
                in_int = tok[2] == "'INTORG'"
                continue
            vname = tok[0]
            if vname not in variables:
                variables[vname] = Variable(vname, 0.0, INF, in_int)
            for rname, val in zip(tok[1::2], tok[2::2]):
                if rname == "OBJ":
                    if float(val) != 0.0:
                        obj_linear[vname] = float(val)
                else:
                    rows[rname].coefs[vname] = float(val)
        elif section == "RHS":
            for rname, val in zip(tok[1::2], tok[2::2]):
                if rname == "OBJ":
                    obj_const = -float(val)
                else:
                    rows[rname].rhs = float(val)
        elif section == "BOUNDS":
            kind, _, vname = tok[:3]
            v = variables[vname]
            if kind == "BV":
                v.binary, v.lb, v.ub = True, 0.0, 1.0
            elif kind == "FR":
                v.lb, v.ub = -INF, INF
            elif kind == "LO":
                v.lb = float(tok[3])
            elif kind == "UP":
                v.ub = float(tok[3])
            elif kind == "MI":
                v.lb = -INF
            elif kind == "FX":
                v.lb = v.ub = float(tok[3])
        elif section == "QMATRIX":
            a, b, val = tok[0], tok[1], float(tok[2])
            # 0.5 x'Qx: diagonal contributes val/2, each off-diagonal pair val/2 per listing
            key = (a, b) if a <= b else (b, a)
            obj_quad[key] = obj_quad.get(key, 0.0) + val / 2.0
        elif section == "QCMATRIX":
            a, b, val = tok[0], tok[1], float(tok[2])
            key = (a, b) if a <= b else (b, a)
            qc_row.quad[key] = qc_row.quad.get(key, 0.0) + val
    return MipModel(
        name,
        list(variables.values()),
        [rows[r] for r in row_order],
        obj_linear=obj_linear,
        obj_quad=obj_quad,
        obj_constant=obj_const,
    )
