"""Property suite run by ``wrinkle check`` on a (minimizer) table."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import make_k_grid, make_x_grid
from .limit_solver import equipartition_residual
from .measure import MeasureTable, bin_frequencies, check_feasible, dilate, eval_F_infty, eval_F_infty_tv
from .recovery import build_recovery, mollify, total_mass_closed_form, truncate
from .spectral import CoefficientSet, analyze, make_y_grid, synthesize


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "value": self.value, "threshold": self.threshold, "detail": self.detail}


def check_plancherel(n_sets: int = 100, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    xg = make_x_grid(4)
    worst = 0.0
    for _ in range(n_sets):
        kg = make_k_grid(1.0, 8 * np.pi)
        yg = make_y_grid(1.0, 64)
        c = CoefficientSet(kg, rng.standard_normal((xg.n, len(kg))), rng.standard_normal(xg.n))
        s = synthesize(c, yg)
        back = analyze(s, kg)
        worst = max(worst, float(np.max(np.abs(back.a - c.a))))
        parseval = np.mean(s.values**2, axis=1) - (np.sum(c.a**2, axis=1) + c.a0**2)
        worst = max(worst, float(np.max(np.abs(parseval))))
    return CheckResult("plancherel", worst <= 1e-10, worst, 1e-10, "round trip and Parseval over random sets")


def check_constraint(t: MeasureTable, tol: float = 1e-12) -> CheckResult:
    rep = check_feasible(t, tol)
    binned = bin_frequencies(dilate(t, 1.5)[0], 2.0)
    res_bin = float(np.max(np.abs(binned.b.sum(axis=1) - 2.0 * binned.x)))
    value = max(rep.residual, res_bin)
    ok = rep.feasible and res_bin <= 1e-13 * max(1.0, binned.lam)
    return CheckResult("constraint", ok, value, tol, f"table residual {rep.residual:.3g}, binned residual {res_bin:.3g}")


def check_homogeneity(t: MeasureTable) -> CheckResult:
    F = eval_F_infty(t)
    worst = max(abs(eval_F_infty(t.scaled(a)) - a * F) / (a * F) for a in (0.5, 2.0, 10.0))
    return CheckResult("homogeneity", worst <= 1e-14, worst, 1e-14, "F(a t) = a F(t)")


def check_convexity(t: MeasureTable, n_segments: int = 20, seed: int = 1) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = -np.inf
    F1 = eval_F_infty(t)
    tv = abs(eval_F_infty_tv(t) - F1) / F1
    for _ in range(n_segments):
        w = rng.uniform(0.1, 1.0, size=t.b.shape)
        other = t.with_b(2.0 * t.x[:, None] * w / w.sum(axis=1, keepdims=True))
        F2 = eval_F_infty(other)
        for th in np.linspace(0.0, 1.0, 11):
            mid = eval_F_infty(t.with_b(th * t.b + (1 - th) * other.b))
            worst = max(worst, mid - (th * F1 + (1 - th) * F2))
    ok = worst <= 1e-12 and tv <= 1e-10
    return CheckResult("convexity", ok, float(worst), 1e-12, f"total-variation form relative difference {tv:.2g}")


def check_mollification(t: MeasureTable, lam: float = 1.3) -> CheckResult:
    stretched, _ = dilate(t, lam)
    tt = truncate(bin_frequencies(stretched, 2.0), lam)
    x = make_x_grid(2000, (-1.0, 1.0)).nodes
    worst = 0.0
    for eps in (0.02, 0.05, 0.1):
        m = mollify(tt, eps, x)
        worst = max(worst, float(np.max(np.abs(m.a.sum(axis=1) - total_mass_closed_form(x, eps, tt.lam_bar)))))
    return CheckResult("mollification", worst <= 1e-12, worst, 1e-12, "row sums of the mollified table against the closed form")


def check_equipartition(t: MeasureTable) -> CheckResult:
    eq = equipartition_residual(t)
    F = eval_F_infty(t)
    rel = eq.global_residual / F
    ok = rel <= 1e-2 and eq.max_active <= 3e-2
    return CheckResult("equipartition", ok, rel, 1e-2, f"max active per-frequency residual {eq.max_active:.3g} (threshold 3e-2)")


def check_periodicity(t: MeasureTable, L: float = 8.0) -> CheckResult:
    fld = build_recovery(t, L)
    worst = max(fld.defects["w1_rel"], fld.defects["w2_rel"])
    return CheckResult("periodicity", worst <= 1e-8, worst, 1e-8, f"recovery at L={L:g}")


def run_checks(t: MeasureTable, break_constraint: bool = False) -> list[CheckResult]:
    constrained = t
    if break_constraint:
        b = t.b.copy()
        b[-1] *= 1.01
        constrained = t.with_b(b)
    return [
        check_plancherel(),
        check_constraint(constrained),
        check_homogeneity(t),
        check_convexity(t),
        check_mollification(t),
        check_equipartition(t),
        check_periodicity(t),
    ]
