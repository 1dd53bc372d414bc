"""Tables b(x_i, k_j) >= 0 standing for sum_k b(x, k) dx (x) delta_k, and the
convex functional

    F(b) = int sum_k [ k^2 b + b_x^2 / (4 k^2 b) ] dx

on them, with the perspective convention for the quotient at b = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grids import KGrid, XGrid, diff_x, make_k_grid, make_x_grid


@dataclass(frozen=True)
class MeasureTable:
    xgrid: XGrid
    kgrid: KGrid
    b: np.ndarray
    b_min: float = 0.0
    bx: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        b = np.array(self.b, dtype=float)
        if b.shape != (self.xgrid.n, len(self.kgrid)):
            raise ValueError(f"table shape {b.shape} != ({self.xgrid.n}, {len(self.kgrid)})")
        if not np.all(np.isfinite(b)):
            raise ValueError("non-finite table entry")
        if self.b_min < 0:
            raise ValueError("b_min must be nonnegative")
        b.setflags(write=False)
        bx = diff_x(b, self.xgrid)
        bx.setflags(write=False)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "bx", bx)

    @property
    def x(self) -> np.ndarray:
        return self.xgrid.nodes

    @property
    def k(self) -> np.ndarray:
        return self.kgrid.k

    @property
    def lam(self) -> float:
        return self.xgrid.domain[1]

    def with_b(self, b: np.ndarray) -> "MeasureTable":
        return MeasureTable(self.xgrid, self.kgrid, b, self.b_min)

    def scaled(self, alpha: float) -> "MeasureTable":
        return self.with_b(alpha * self.b)

    def mass(self) -> float:
        return float(np.sum(self.xgrid.integrate(self.b)))


@dataclass(frozen=True)
class FeasibilityReport:
    residual: float
    min_b: float
    n_negative: int
    n_support_violations: int
    tol: float

    @property
    def feasible(self) -> bool:
        return self.residual <= self.tol and self.n_negative == 0 and self.n_support_violations == 0


def check_feasible(t: MeasureTable, tol: float = 1e-12) -> FeasibilityReport:
    residual = float(np.max(np.abs(t.b.sum(axis=1) - 2.0 * t.x)))
    neg = t.b < 0
    support = (t.b == 0) & (t.bx != 0)
    return FeasibilityReport(
        residual=residual,
        min_b=float(t.b.min()),
        n_negative=int(neg.sum()),
        n_support_violations=int(support.sum()),
        tol=tol,
    )


def _require_nonnegative(t: MeasureTable) -> None:
    if np.any(t.b < 0):
        raise ValueError("table has negative entries")


def quotient_density(b: np.ndarray, bx: np.ndarray, k: np.ndarray, b_min: float = 0.0) -> np.ndarray:
    """bx^2 / (4 k^2 b) entrywise; 0 where b = bx = 0 and +inf where only b = 0."""
    denom = np.maximum(b, b_min) if b_min > 0 else b
    with np.errstate(divide="ignore", invalid="ignore"):
        q = bx**2 / (4.0 * k**2 * denom)
    q = np.where(denom > 0, q, np.where(bx == 0, 0.0, np.inf))
    return q


@dataclass(frozen=True)
class FParts:
    """Per-frequency integrals of the two halves of F."""

    moment: np.ndarray
    quotient: np.ndarray
    floored: bool
    skip: int

    @property
    def value(self) -> float:
        total = float(np.sum(self.moment) + np.sum(self.quotient))
        return total if np.isfinite(total) else math.inf


def F_infty_parts(t: MeasureTable, skip: int = 0) -> FParts:
    _require_nonnegative(t)
    w = t.xgrid.trapezoid_weights(skip)
    k = t.k
    moment = (w @ t.b) * k**2
    q = quotient_density(t.b, t.bx, k, t.b_min)
    # 0 * inf on skipped nodes must stay 0
    quotient = np.sum(np.where(w[:, None] > 0, w[:, None] * q, 0.0), axis=0)
    return FParts(moment=moment, quotient=quotient, floored=t.b_min > 0, skip=skip)


def eval_F_infty(t: MeasureTable, skip: int = 0) -> float:
    """Discrete F on the table; ``math.inf`` if the quotient is infinite.

    ``skip`` drops the first nodes from the quadrature, to expose the
    logarithmic growth of the quotient near x = 0 under grid refinement.
    """
    return F_infty_parts(t, skip).value


def eval_F_infty_tv(t: MeasureTable, skip: int = 0) -> float:
    """F evaluated through densities against the total variation of (b, b_x)."""
    _require_nonnegative(t)
    w = t.xgrid.trapezoid_weights(skip)
    k = t.k
    tv = np.hypot(t.b, t.bx)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(tv > 0, t.b / tv, 0.0)
        q = np.where(tv > 0, t.bx / tv, 0.0)
        integrand = np.where(p > 0, q**2 / p, np.where(q == 0, 0.0, np.inf)) * tv / (4.0 * k**2)
    integrand = np.where(w[:, None] > 0, w[:, None] * integrand, 0.0)
    total = float(np.sum((w @ (tv * p)) * k**2) + np.sum(integrand))
    return total if np.isfinite(total) else math.inf


@dataclass(frozen=True)
class XDisintegration:
    x: np.ndarray
    nu: np.ndarray  # (n_x, n_k), rows sum to 1
    density: np.ndarray  # 2x


@dataclass(frozen=True)
class KDisintegration:
    k: np.ndarray
    weights: np.ndarray  # lambda_j
    profiles: np.ndarray  # g_k(x_i), zero columns where lambda_j = 0
    active: np.ndarray


def _require_feasible(t: MeasureTable, tol: float) -> None:
    rep = check_feasible(t, tol)
    if not rep.feasible:
        raise ValueError(f"infeasible table: row residual {rep.residual:.3g}, {rep.n_negative} negative entries")


def disintegrate_x(t: MeasureTable, tol: float = 1e-10) -> XDisintegration:
    _require_feasible(t, tol * max(1.0, t.lam))
    density = 2.0 * t.x
    return XDisintegration(x=t.x.copy(), nu=t.b / density[:, None], density=density)


def disintegrate_k(t: MeasureTable, tol: float = 1e-10) -> KDisintegration:
    _require_feasible(t, tol * max(1.0, t.lam))
    weights = t.xgrid.integrate(t.b)
    active = weights > 0
    profiles = np.zeros_like(t.b)
    profiles[:, active] = t.b[:, active] / weights[active]
    return KDisintegration(k=t.k.copy(), weights=weights, profiles=profiles, active=active)


def dilate(t: MeasureTable, lam: float, target: XGrid | None = None) -> tuple[MeasureTable, bool]:
    """Stretch to [0, lam * end] with density lam * b(x / lam, k).

    Without ``target`` the nodes are stretched along (exact). With ``target``
    the stretched table is linearly interpolated onto it; the second return
    value flags that interpolation happened.
    """
    if not 1.0 <= lam < 2.0:
        raise ValueError(f"dilation factor must lie in [1, 2), got {lam}")
    a, end = t.xgrid.domain
    if a != 0.0:
        raise ValueError("dilation needs a table on [0, end]")
    stretched = make_x_grid(t.xgrid.n, (0.0, lam * end))
    out = MeasureTable(stretched, t.kgrid, lam * t.b, t.b_min)
    if target is None:
        return out, False
    xs = np.concatenate([[0.0], stretched.nodes])
    vals = np.vstack([np.zeros(len(t.kgrid)), out.b])
    b = np.column_stack([np.interp(target.nodes, xs, vals[:, j]) for j in range(vals.shape[1])])
    return MeasureTable(target, t.kgrid, b, t.b_min), True


def bin_index(k_src: np.ndarray, L0: float) -> np.ndarray:
    """Integer j of the output frequency j*pi/L0 receiving each source frequency.

    Bins are (k - pi/L0, k] for k > 0 and [k, k + pi/L0) for k < 0; a source
    within rounding of a bin edge goes to the closed endpoint.
    """
    r = np.asarray(k_src, dtype=float) * L0 / np.pi
    near = np.round(r)
    on_edge = np.abs(r - near) <= 1e-9 * np.maximum(1.0, np.abs(r))
    j = np.where(r > 0, np.ceil(r), np.floor(r))
    return np.where(on_edge, near, j).astype(int)


def bin_frequencies(t: MeasureTable, L0: float, k_max: float | None = None) -> MeasureTable:
    """Move all mass of every source frequency to the end of its bin on the comb pi/L0 Z."""
    if not L0 > 0:
        raise ValueError("L0 must be positive")
    j = bin_index(t.k, L0)
    if np.any(j == 0):
        raise ValueError("a source frequency is zero")
    need = np.max(np.abs(j)) * np.pi / L0
    if k_max is None:
        k_max = need
    elif need > k_max * (1 + 1e-12):
        raise ValueError(f"k_max={k_max} does not cover the source support (needs {need:.6g})")
    kg = make_k_grid(L0, k_max, symmetric=bool(np.any(t.kgrid.index < 0)))
    col = np.searchsorted(kg.index, j)
    b = np.zeros((t.xgrid.n, len(kg)))
    # fixed accumulation order: ascending source column
    for src, dst in enumerate(col):
        b[:, dst] += t.b[:, src]
    return MeasureTable(t.xgrid, kg, b, t.b_min)
