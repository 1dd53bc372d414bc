"""Rescaled excess energy of a displacement field, term by term.

    t1 = L^2  avg int (w1_x + u_x^2 / (2 L^2) - 1)^2
    t2 = L^2  avg int (w2_y + u_y^2 / 2 - x)^2
    t3 =      avg int (L^2 w1_y + w2_x + u_x u_y)^2
    t4 =      avg int (u_x^2 + u_yy^2)
    t5 = L^-2 avg int (2 u_xy^2 + L^-2 u_xx^2)
    total = t1 - L^2 / 3 + t2 + t3 + t4 + t5

``avg`` is the mean over one y-period and ``int`` runs over x in [-1, 1].
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .grids import make_x_grid, simpson_weights
from .measure import MeasureTable, eval_F_infty
from .recovery import DisplacementField, build_recovery, cutoff, step1_prefactor
from .spectral import basis_derivative_matrix, diff_y


@dataclass(frozen=True)
class EnergyBreakdown:
    L: float
    t1: float
    offset: float
    t2: float
    t3: float
    t4: float
    t5: float

    @property
    def total(self) -> float:
        return self.t1 + self.offset + self.t2 + self.t3 + self.t4 + self.t5


def integrate_x(values: np.ndarray, xgrid) -> np.ndarray | float:
    """Simpson's rule over the whole x-domain along axis 0.

    The left endpoint is not stored; its value is extrapolated by the quadratic
    through the first three nodes, which keeps the rule exact for quadratics.
    """
    values = np.asarray(values, dtype=float)
    n = xgrid.n
    if n % 2 or n < 4:
        raise ValueError("Simpson's rule needs an even number of cells (>= 4)")
    left = 3.0 * values[0] - 3.0 * values[1] + values[2]
    full = np.concatenate([left[None, ...], values], axis=0)
    return np.tensordot(simpson_weights(n, xgrid.h), full, axes=(0, 0))


def _coefficient_derivatives(fld: DisplacementField) -> tuple[np.ndarray, np.ndarray]:
    if fld.c_x is not None and fld.c_xx is not None:
        return fld.c_x, fld.c_xx
    x = fld.xgrid.nodes
    c1 = np.gradient(fld.u.a, x, axis=0, edge_order=2)
    return c1, np.gradient(c1, x, axis=0, edge_order=2)


def _x_derivative(samples: np.ndarray, exact: np.ndarray | None, x: np.ndarray) -> np.ndarray:
    if exact is not None:
        return exact
    return np.gradient(samples, x, axis=0, edge_order=2)


def _check_resolution(fld: DisplacementField) -> None:
    j = fld.u.kgrid.j_max
    if not np.isclose(fld.u.kgrid.L_eff, fld.ygrid.L0, rtol=1e-12, atol=0.0):
        raise ValueError("coefficient period differs from the sample period")
    if fld.ygrid.m <= 4 * j:
        raise ValueError(f"m={fld.ygrid.m} aliases quartic products of mode {j}; need m > {4 * j}")


def u_samples(fld: DisplacementField) -> dict[str, np.ndarray]:
    """Derivatives of u on the sample grid, from the coefficients."""
    kg = fld.u.kgrid
    y = fld.ygrid.nodes
    c1, c2 = _coefficient_derivatives(fld)
    B = {o: basis_derivative_matrix(kg, y, o).T for o in (0, 1, 2)}
    return {
        "u_x": c1 @ B[0],
        "u_y": fld.u.a @ B[1],
        "u_xx": c2 @ B[0],
        "u_xy": c1 @ B[1],
        "u_yy": fld.u.a @ B[2],
    }


def eval_F_L(fld: DisplacementField, L: float) -> EnergyBreakdown:
    _check_resolution(fld)
    x = fld.xgrid.nodes
    L2 = L * L
    s = u_samples(fld)
    w1_x = _x_derivative(fld.w1, fld.w1_x, x)
    w2_x = _x_derivative(fld.w2, fld.w2_x, x)
    w1_y = diff_y(fld.w1, fld.ygrid.L0)
    w2_y = diff_y(fld.w2, fld.ygrid.L0)

    def avg_int(q):
        return float(integrate_x(np.mean(q, axis=1), fld.xgrid))

    t1 = L2 * avg_int((w1_x + s["u_x"] ** 2 / (2.0 * L2) - 1.0) ** 2)
    t2 = L2 * avg_int((w2_y + 0.5 * s["u_y"] ** 2 - x[:, None]) ** 2)
    t3 = avg_int((L2 * w1_y + w2_x + s["u_x"] * s["u_y"]) ** 2)
    t4, t5 = bending_terms(fld, L)
    return EnergyBreakdown(L=float(L), t1=t1, offset=-L2 / 3.0, t2=t2, t3=t3, t4=t4, t5=t5)


def bending_terms(fld: DisplacementField, L: float) -> tuple[float, float]:
    """t4 and t5 from coefficients alone (Plancherel)."""
    k = fld.u.kgrid.k
    c = fld.u.a
    c1, c2 = _coefficient_derivatives(fld)
    t4 = float(integrate_x(np.sum(c1**2 + k**4 * c**2, axis=1), fld.xgrid))
    t5 = float(integrate_x(np.sum(2.0 * k**2 * c1**2 + c2**2 / L**2, axis=1), fld.xgrid)) / L**2
    return t4, t5


def bending_terms_sampled(fld: DisplacementField, L: float) -> tuple[float, float]:
    """t4 and t5 by averaging squared samples; cross-check of :func:`bending_terms`."""
    s = u_samples(fld)

    def avg_int(q):
        return float(integrate_x(np.mean(q, axis=1), fld.xgrid))

    t4 = avg_int(s["u_x"] ** 2 + s["u_yy"] ** 2)
    t5 = avg_int(2.0 * s["u_xy"] ** 2 + s["u_xx"] ** 2 / L**2) / L**2
    return t4, t5


def limit_density_table(fld: DisplacementField) -> MeasureTable:
    """Table k^2 c^2 on the nodes x > 0 of the field's x-grid (the measure carried by u)."""
    x = fld.xgrid.nodes
    pos = x > 0
    xs = x[pos]
    n = len(xs)
    if not np.isclose(xs[-1], 1.0) or not np.isclose(xs[0], fld.xgrid.h, rtol=1e-9):
        raise ValueError("field x-grid must contain 0 as a node and end at 1")
    grid = make_x_grid(n, (0.0, 1.0))
    return MeasureTable(grid, fld.u.kgrid, (fld.u.kgrid.k * fld.u.a[pos]) ** 2)


def flat_field(L: float, nx: int = 200, m: int = 16) -> DisplacementField:
    """Relaxed flat state w1 = x, w2 = 0, u = 0 on [-1, 1] x [-L, L)."""
    from .grids import make_k_grid
    from .spectral import CoefficientSet, make_y_grid

    xg = make_x_grid(nx, (-1.0, 1.0))
    kg = make_k_grid(L, math.pi / L)
    yg = make_y_grid(L, m)
    w1 = np.repeat(xg.nodes[:, None], m, axis=1)
    return DisplacementField(
        xgrid=xg, ygrid=yg, u=CoefficientSet(kg, np.zeros((nx, len(kg)))),
        w1=w1, w2=np.zeros((nx, m)),
    )


def cutoff_residual(fld: DisplacementField, L: float) -> float:
    """L^2 int_0^1 (1 - psi^2)^2 x^2: the part of t2 + offset left by the cutoff."""
    x = fld.xgrid.nodes
    psi, _, _ = cutoff(x, fld.params.delta)
    q = np.where(x > 0, (1.0 - psi**2) ** 2 * x**2, 0.0)
    return L * L * float(integrate_x(q, fld.xgrid))


# -- gap study --

GAP_FIELDS = ("L", "t1", "offset", "t2", "t3", "t4", "t5", "total", "F_inf", "gap")


@dataclass(frozen=True)
class GapRow:
    L: float
    breakdown: EnergyBreakdown
    F_inf: float
    t2_excess: float  # t2 + offset minus the cutoff residual
    t4_bound: float  # F_inf * (1 + step-1 prefactor)
    prefactor: float
    lam_bar: float
    F_recovered: float  # discrete F_inf of the measure carried by u
    bl_distance: float

    @property
    def gap(self) -> float:
        return self.breakdown.total - self.F_inf


@dataclass(frozen=True)
class GapReport:
    rows: list[GapRow]

    @property
    def gaps(self) -> np.ndarray:
        return np.array([r.gap for r in self.rows])

    def verdict(self) -> dict:
        g = self.gaps
        return {
            "positive": bool(np.all(g > 0)),
            "decreasing_after_first": bool(np.all(np.diff(g[1:]) < 0)) if len(g) > 2 else True,
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(GAP_FIELDS)
            for r in self.rows:
                b = r.breakdown
                vals = (r.L, b.t1, b.offset, b.t2, b.t3, b.t4, b.t5, b.total, r.F_inf, r.gap)
                w.writerow([f"{v:.17g}" for v in vals])


def gamma_gap(t: MeasureTable, Ls: Sequence[float], nx: int = 2000, with_distance: bool = True) -> GapReport:
    from .recovery import bl_distance

    F = eval_F_infty(t)
    if not math.isfinite(F):
        raise ValueError("source table has infinite energy")
    rows = []
    for L in Ls:
        fld = build_recovery(t, L, nx=nx)
        eb = eval_F_L(fld, L)
        pref = step1_prefactor(fld.params)
        rows.append(
            GapRow(
                L=float(L), breakdown=eb, F_inf=F,
                t2_excess=eb.t2 + eb.offset - cutoff_residual(fld, L),
                t4_bound=F * (1.0 + pref), prefactor=pref, lam_bar=fld.params.lam_bar,
                F_recovered=eval_F_infty(limit_density_table(fld)),
                bl_distance=bl_distance(fld, t) if with_distance else math.nan,
            )
        )
    return GapReport(rows)


def breakdown_dict(eb: EnergyBreakdown) -> dict:
    d = asdict(eb)
    d["total"] = eb.total
    return d
