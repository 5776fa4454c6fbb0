"""Panel outcome data: loading, validation, subsampling and synthetic treatment."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class PanelError(ValueError):
    """Raised for malformed panel input or inconsistent dimensions."""


@dataclass(frozen=True)
class Panel:
    """N x S outcome matrix with unit/period labels and a pre-treatment cutoff.

    Rows are units, columns are periods in stored order. The first ``t_pre``
    columns are pre-treatment.
    """

    unit_ids: tuple[str, ...]
    period_ids: tuple[str, ...]
    Y: np.ndarray
    t_pre: int

    def __post_init__(self):
        Y = np.array(self.Y, dtype=float, copy=True)
        if Y.ndim != 2:
            raise PanelError(f"outcome matrix must be 2-d, got shape {Y.shape}")
        n, s = Y.shape
        object.__setattr__(self, "unit_ids", tuple(str(u) for u in self.unit_ids))
        object.__setattr__(self, "period_ids", tuple(str(p) for p in self.period_ids))
        if len(self.unit_ids) != n:
            raise PanelError(f"{len(self.unit_ids)} unit ids for {n} rows")
        if len(self.period_ids) != s:
            raise PanelError(f"{len(self.period_ids)} period ids for {s} columns")
        if len(set(self.unit_ids)) != n:
            dupes = sorted({u for u in self.unit_ids if self.unit_ids.count(u) > 1})
            raise PanelError(f"duplicate unit ids: {dupes}")
        if n < 2:
            raise PanelError("a panel needs at least 2 units")
        if not np.all(np.isfinite(Y)):
            raise PanelError("outcome matrix contains missing or non-finite entries")
        if not 1 <= int(self.t_pre) <= s:
            raise PanelError(f"t_pre={self.t_pre} outside [1, {s}]")
        object.__setattr__(self, "t_pre", int(self.t_pre))
        Y.setflags(write=False)
        object.__setattr__(self, "Y", Y)

    @property
    def n_units(self) -> int:
        return self.Y.shape[0]

    @property
    def n_periods(self) -> int:
        return self.Y.shape[1]

    @property
    def n_post(self) -> int:
        return self.n_periods - self.t_pre

    @property
    def pre(self) -> np.ndarray:
        return self.Y[:, : self.t_pre]

    @property
    def post(self) -> np.ndarray:
        return self.Y[:, self.t_pre :]

    def with_t_pre(self, t_pre: int) -> "Panel":
        return Panel(self.unit_ids, self.period_ids, self.Y, t_pre)

    def with_outcomes(self, Y: np.ndarray) -> "Panel":
        return Panel(self.unit_ids, self.period_ids, Y, self.t_pre)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["unit", *self.period_ids])
        for uid, row in zip(self.unit_ids, self.Y):
            writer.writerow([uid, *(repr(float(v)) for v in row)])
        return buf.getvalue()


@dataclass(frozen=True)
class TreatmentScenario:
    """Additive per-unit effects applied in every post-treatment period."""

    effects: np.ndarray
    treated_periods: int

    def __post_init__(self):
        eff = np.asarray(self.effects, dtype=float).copy()
        if eff.ndim != 1 or not np.all(np.isfinite(eff)):
            raise PanelError("effects must be a finite 1-d vector")
        if int(self.treated_periods) < 1:
            raise PanelError("treated_periods must be >= 1")
        eff.setflags(write=False)
        object.__setattr__(self, "effects", eff)
        object.__setattr__(self, "treated_periods", int(self.treated_periods))

    def negated(self) -> "TreatmentScenario":
        return TreatmentScenario(-self.effects, self.treated_periods)


def load_panel(csv_text: str, t_pre: int) -> Panel:
    """Parse a wide-format CSV (header of period labels, one row per unit).

    The first header cell is ignored. Every data row is a unit id followed by
    one numeric value per period.
    """
    rows = [r for r in csv.reader(io.StringIO(csv_text)) if r and any(c.strip() for c in r)]
    if len(rows) < 2:
        raise PanelError("CSV needs a header row and at least one unit row")
    header = [c.strip() for c in rows[0]]
    period_ids = header[1:]
    s = len(period_ids)
    if s == 0:
        raise PanelError("header has no period columns")
    unit_ids: list[str] = []
    values = np.empty((len(rows) - 1, s))
    for r, row in enumerate(rows[1:]):
        lineno = r + 2
        if len(row) != s + 1:
            raise PanelError(f"line {lineno}: ragged row, expected {s + 1} cells, found {len(row)}")
        unit_ids.append(row[0].strip())
        for c, cell in enumerate(row[1:]):
            try:
                v = float(cell.strip())
            except ValueError:
                raise PanelError(f"line {lineno}, column {c + 2}: non-numeric cell {cell!r}") from None
            if not math.isfinite(v):
                raise PanelError(f"line {lineno}, column {c + 2}: non-finite value {cell!r}")
            values[r, c] = v
    return Panel(tuple(unit_ids), tuple(period_ids), values, t_pre)


def read_panel(path, t_pre: int) -> Panel:
    with open(path, encoding="utf-8") as fh:
        return load_panel(fh.read(), t_pre)


def subsample(
    panel: Panel,
    n_units: int,
    n_periods: int,
    seed: int | np.random.Generator,
    t_pre: int | None = None,
) -> Panel:
    """Random unit subset (source row order kept) and a random contiguous period window.

    ``t_pre`` defaults to keeping the source's pre/post proportion clipped to
    the window; callers running simulations always pass it explicitly.
    """
    n, s = panel.Y.shape
    if not 1 <= n_units <= n:
        raise PanelError(f"n_units={n_units} outside [1, {n}]")
    if not 1 <= n_periods <= s:
        raise PanelError(f"n_periods={n_periods} outside [1, {s}]")
    rng = np.random.default_rng(seed)
    rows = np.sort(rng.choice(n, size=n_units, replace=False))
    start = int(rng.integers(0, s - n_periods + 1))
    cols = np.arange(start, start + n_periods)
    if t_pre is None:
        t_pre = max(1, min(n_periods, round(panel.t_pre * n_periods / s)))
    return Panel(
        tuple(panel.unit_ids[i] for i in rows),
        tuple(panel.period_ids[j] for j in cols),
        panel.Y[np.ix_(rows, cols)],
        t_pre,
    )


def apply_treatment(panel: Panel, treated: Sequence[int] | np.ndarray, scenario: TreatmentScenario) -> Panel:
    """Add each treated unit's effect to its post-treatment cells.

    ``treated`` is either a binary indicator vector of length N or anything
    with a ``D`` attribute (a design).
    """
    D = _indicator(treated, panel.n_units)
    if scenario.effects.shape[0] != panel.n_units:
        raise PanelError(f"{scenario.effects.shape[0]} effects for {panel.n_units} units")
    if scenario.treated_periods != panel.n_post:
        raise PanelError(
            f"scenario covers {scenario.treated_periods} treated periods, panel has {panel.n_post}"
        )
    Y = np.array(panel.Y)
    Y[:, panel.t_pre :] += (D * scenario.effects)[:, None]
    return panel.with_outcomes(Y)


def _indicator(treated, n: int) -> np.ndarray:
    D = getattr(treated, "D", treated)
    D = np.asarray(D)
    if D.shape != (n,):
        raise PanelError(f"treatment indicator has shape {D.shape}, expected ({n},)")
    return (D != 0).astype(float)
