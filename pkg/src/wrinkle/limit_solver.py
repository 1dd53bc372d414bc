"""Minimizer of the discrete limit functional over tables with row sums 2x.

The engine is a primal log-barrier Newton method: for a decreasing sequence of
barrier weights mu it minimizes

    F(b) - mu * sum_ij w_i log(b_ij - floor_i)   subject to   sum_j b_ij = 2 x_i

with equality-constrained Newton steps (one sparse KKT solve per step), a
fraction-to-boundary rule and Armijo backtracking. Iterates stay strictly above
the floor and keep their row sums; a multiplicative row renormalization removes
rounding drift after every step.

A symmetric frequency grid is folded onto |k| before solving: the functional
depends on |k| only and is 1-homogeneous per column, so splitting each folded
column evenly between +k and -k gives a minimizer with the same value.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grids import KGrid, make_k_grid, make_x_grid
from .measure import F_infty_parts, MeasureTable, eval_F_infty

log = logging.getLogger(__name__)

SUPPORT_BOUND = math.sqrt(math.pi / 2.0)


@dataclass(frozen=True)
class SolverConfig:
    nx: int = 200
    x_end: float = 1.0
    L_eff: float = 8.0
    k_max: float = 12.0
    symmetric: bool = True
    floor_rel: float = 1e-12  # b > floor_rel * 2x during iteration
    max_iters: int = 400
    kkt_tol: float = 1e-6
    armijo: float = 1e-4
    backtrack: float = 0.5
    mu_start: float = 1e-1
    mu_factor: float = 0.1
    init: str = "balance"  # "balance", "uniform" or "random"
    seed: int = 0

    def __post_init__(self):
        if not self.kkt_tol > 0:
            raise ValueError("kkt_tol must be positive")
        if int(self.nx) != self.nx or self.nx < 2:
            raise ValueError("nx must be an integer >= 2")
        if not self.x_end > 0:
            raise ValueError("x_end must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if not 0 < self.floor_rel < 1e-3:
            raise ValueError("floor_rel must lie in (0, 1e-3)")
        if not 0 < self.armijo < 0.5 or not 0 < self.backtrack < 1:
            raise ValueError("step rule parameters out of range")
        if not self.mu_start > 0 or not 0 < self.mu_factor < 1:
            raise ValueError("barrier schedule out of range")
        if self.init not in ("balance", "uniform", "random"):
            raise ValueError(f"unknown init {self.init!r}")
        if not self.L_eff > 0:
            raise ValueError("L_eff must be positive")
        if self.k_max < SUPPORT_BOUND:
            raise ValueError(f"k_max={self.k_max} is below the support bound {SUPPORT_BOUND:.4f}")

    def grids(self):
        return make_x_grid(self.nx, (0.0, self.x_end)), make_k_grid(self.L_eff, self.k_max, self.symmetric)


@dataclass(frozen=True)
class EquipartitionResidual:
    k: np.ndarray
    r_k: np.ndarray  # nan where inactive
    lambda_k: np.ndarray
    active: np.ndarray
    moment: np.ndarray
    quotient: np.ndarray
    global_residual: float

    @property
    def max_active(self) -> float:
        return float(np.max(self.r_k[self.active])) if np.any(self.active) else 0.0


@dataclass(frozen=True)
class MinimizerReport:
    table: MeasureTable
    objective: float
    kkt_residual: float
    iterations: int
    converged: bool
    history: list = field(repr=False, default_factory=list)  # (mu, barrier value, F, kkt) per step
    elapsed: float = 0.0


# -- objective pieces on a positive-half problem, operating on raw arrays --


@dataclass(frozen=True)
class _Problem:
    w: np.ndarray  # (n,) trapezoid weights
    h: float
    k: np.ndarray  # (m,) positive frequencies
    target: np.ndarray  # (n,) row sums 2x
    floor: np.ndarray  # (n,) lower bound per row

    @property
    def c(self) -> np.ndarray:
        return 1.0 / (4.0 * self.k**2 * self.h**2)


def _objective(P: _Problem, b: np.ndarray) -> float:
    prev = np.vstack([np.zeros(b.shape[1]), b[:-1]])
    d = b - prev
    dens = P.k**2 * b + P.c * d**2 / b
    return float(P.w @ dens.sum(axis=1))


def _gradient(P: _Problem, b: np.ndarray) -> np.ndarray:
    prev = np.vstack([np.zeros(b.shape[1]), b[:-1]])
    r = prev / b
    wc = P.w[:, None] * P.c
    g = P.w[:, None] * P.k**2 + wc * (1.0 - r**2)
    g[:-1] -= 2.0 * wc[1:] * (1.0 - r[1:])
    return g


def _hessian_bands(P: _Problem, b: np.ndarray):
    """Diagonal and sub-diagonal (in x) of the per-column Hessian."""
    prev = np.vstack([np.zeros(b.shape[1]), b[:-1]])
    r = prev / b
    wc = P.w[:, None] * P.c
    diag = wc * 2.0 * r**2 / b
    diag[:-1] += wc[1:] * 2.0 / b[1:]
    sub = -wc[1:] * 2.0 * r[1:] / b[1:]  # couples (i, i-1) for i >= 1
    return diag, sub


def project_rows(v: np.ndarray, target: np.ndarray, floor: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row onto {b >= floor, sum b = target}.

    Sort-based; a stable sort breaks ties by lower index.
    """
    n, m = v.shape
    z = target - m * floor
    if np.any(z < 0):
        raise ValueError("floor too large for the row sums")
    u = v - floor[:, None]
    s = -np.sort(-u, axis=1, kind="stable")
    css = np.cumsum(s, axis=1) - z[:, None]
    ind = np.arange(1, m + 1)
    cond = s - css / ind > 0
    rho = m - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(n), rho] / (rho + 1)
    return np.maximum(u - theta[:, None], 0.0) + floor[:, None]


def kkt_residual_arrays(P: _Problem, b: np.ndarray, g: np.ndarray | None = None) -> float:
    """Scale-free natural residual of the row-constrained problem.

    Per entry ``|min((b - floor) / 2x, (G - nu) / (1 + |nu|))|`` where G is the
    gradient per unit quadrature weight and nu its mass-weighted row average.
    It vanishes exactly at first-order stationary points.
    """
    if g is None:
        g = _gradient(P, b)
    G = g / P.w[:, None]
    p = b / b.sum(axis=1, keepdims=True)
    nu = np.sum(p * G, axis=1)
    slack = (b - P.floor[:, None]) / P.target[:, None]
    dual = (G - nu[:, None]) / (1.0 + np.abs(nu[:, None]))
    return float(np.max(np.abs(np.minimum(slack, dual))))


def _fold(kgrid: KGrid, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pos = kgrid.index > 0
    kpos = kgrid.k[pos]
    out = b[:, pos].copy()
    neg = kgrid.index < 0
    if np.any(neg):
        jn = -kgrid.index[neg]
        cols = np.searchsorted(kgrid.index[pos], jn)
        np.add.at(out, (slice(None), cols), b[:, neg])
    return kpos, out


def _unfold(kgrid: KGrid, bpos: np.ndarray) -> np.ndarray:
    pos = kgrid.index > 0
    jp = kgrid.index[pos]
    cols = np.searchsorted(jp, np.abs(kgrid.index))
    factor = 0.5 if np.any(kgrid.index < 0) else 1.0
    return factor * bpos[:, cols]


def _kkt_step(b: np.ndarray, grad: np.ndarray, diag: np.ndarray, sub: np.ndarray):
    """Newton step d with zero row sums for the model ``grad.d + d.H.d / 2``.

    H is block tridiagonal (one block per column, bands ``diag``/``sub``). The
    system is Jacobi-scaled so its diagonal is one, then solved by sparse LU.
    Returns the step and the row multipliers.
    """
    n, m = b.shape
    s = 1.0 / np.sqrt(diag)
    N = n * m
    idx = np.arange(N).reshape(m, n).T  # column-major: idx[i, j]
    ii, jj = np.indices((n, m)).reshape(2, -1)
    i2, j2 = np.indices((n - 1, m)).reshape(2, -1)
    off = sub[i2, j2] * s[i2 + 1, j2] * s[i2, j2]
    rows = np.concatenate([idx[ii, jj], idx[i2 + 1, j2], idx[i2, j2], N + ii, idx[ii, jj]])
    cols = np.concatenate([idx[ii, jj], idx[i2, j2], idx[i2 + 1, j2], idx[ii, jj], N + ii])
    vals = np.concatenate([np.ones(N), off, off, s[ii, jj], s[ii, jj]])
    K = sp.csc_matrix((vals, (rows, cols)), shape=(N + n, N + n))
    rhs = np.zeros(N + n)
    rhs[idx[ii, jj]] = -(grad * s)[ii, jj]
    sol = spla.splu(K, permc_spec="COLAMD").solve(rhs)
    d = np.zeros((n, m))
    d[ii, jj] = sol[idx[ii, jj]] * s[ii, jj]
    return d, -sol[N:]


def initial_table(cfg: SolverConfig) -> MeasureTable:
    """Starting table with row sums 2x.

    ``balance`` spreads mass like exp(-(|k| - k*(x))^2 / 2) around the pointwise
    balance frequency k*(x) = (2x)^(-1/2); ``uniform`` splits it evenly;
    ``random`` draws row weights from the seeded generator.
    """
    xg, kg = cfg.grids()
    x = xg.nodes
    if cfg.init == "uniform":
        wgt = np.ones((len(x), len(kg)))
    elif cfg.init == "random":
        rng = np.random.default_rng(cfg.seed)
        wgt = rng.uniform(0.5, 1.5, size=(len(x), len(kg)))
    else:
        kstar = np.clip(1.0 / np.sqrt(2.0 * x), kg.spacing, kg.k_max)
        # wide bump with a relative floor keeps every column well inside the barrier
        wgt = np.exp(-0.5 * (np.abs(kg.k)[None, :] - kstar[:, None]) ** 2) + 1e-3
    b = 2.0 * x[:, None] * wgt / wgt.sum(axis=1, keepdims=True)
    return MeasureTable(xg, kg, b)


def minimize_F_infty(cfg: SolverConfig, init: MeasureTable | None = None) -> MinimizerReport:
    """Minimize the discrete functional on the configured grids.

    Stops once the natural KKT residual is at most ``kkt_tol``. If
    ``max_iters`` Newton steps do not get there, the best iterate is returned
    with ``converged=False``.
    """
    start = time.perf_counter()
    xg, kg = cfg.grids()
    if init is None:
        init = initial_table(cfg)
    elif init.xgrid.n != xg.n or not np.allclose(init.x, xg.nodes, rtol=1e-12, atol=0) or not np.array_equal(
        init.kgrid.index, kg.index
    ):
        raise ValueError("initial table is not on the configured grids")
    x = xg.nodes
    target = 2.0 * x
    floor = cfg.floor_rel * target
    kpos, b = _fold(kg, init.b)
    if np.any(np.abs(b.sum(axis=1) - target) > 1e-10 * np.maximum(target, 1.0)):
        raise ValueError("initial table violates the row constraint")
    # pull the start strictly inside the barrier without breaking row sums
    b = np.maximum(b, 2.0 * floor[:, None])
    b *= (target / b.sum(axis=1))[:, None]
    P = _Problem(w=xg.trapezoid_weights(), h=xg.h, k=kpos, target=target, floor=floor)
    W = P.w[:, None]
    fl = floor[:, None]

    def barrier_obj(v, mu):
        return _objective(P, v) - mu * float(np.sum(W * np.log(v - fl)))

    mu = cfg.mu_start
    res = kkt_residual_arrays(P, b)
    history = [(mu, barrier_obj(b, mu), _objective(P, b), res)]
    iters = 0
    converged = res <= cfg.kkt_tol
    while not converged and iters < cfg.max_iters:
        for _ in range(50):
            if iters >= cfg.max_iters:
                break
            slack = b - fl
            g = _gradient(P, b) - mu * W / slack
            diag, sub = _hessian_bands(P, b)
            diag = diag + mu * W / slack**2
            d, _ = _kkt_step(b, g, diag, sub)
            decrement = -float(np.sum(g * d))
            if not np.all(np.isfinite(d)) or decrement <= 0:
                break
            shrink = d < 0
            t = min(1.0, 0.99 * float(np.min(slack[shrink] / -d[shrink]))) if np.any(shrink) else 1.0
            phi0 = barrier_obj(b, mu)
            accepted = False
            while t > 1e-16:
                trial = b + t * d
                if np.all(trial > fl) and barrier_obj(trial, mu) <= phi0 - cfg.armijo * t * decrement:
                    accepted = True
                    break
                t *= cfg.backtrack
            if not accepted:
                break
            b = trial * (target / trial.sum(axis=1))[:, None]
            iters += 1
            history.append((mu, barrier_obj(b, mu), _objective(P, b), kkt_residual_arrays(P, b)))
            log.debug("iter %d mu=%.1e F=%.15g kkt=%.3e t=%.3g", iters, mu, history[-1][2], history[-1][3], t)
            # centred enough for this barrier weight
            if decrement < 1e-3 * mu * float(np.sum(W)):
                break
        res = kkt_residual_arrays(P, b)
        converged = res <= cfg.kkt_tol
        if mu < 1e-18:
            break
        mu *= cfg.mu_factor

    table = MeasureTable(xg, kg, _unfold(kg, b))
    rep = MinimizerReport(
        table=table,
        objective=eval_F_infty(table),
        kkt_residual=res,
        iterations=iters,
        converged=converged,
        history=history,
        elapsed=time.perf_counter() - start,
    )
    if not converged:
        log.warning("solver stopped at kkt residual %.3e > %.1e", res, cfg.kkt_tol)
    return rep


def kkt_residual(t: MeasureTable, floor_rel: float = 1e-12) -> float:
    """First-order residual of ``t`` for the floored problem on its own grids."""
    kpos, b = _fold(t.kgrid, t.b)
    target = 2.0 * t.x
    P = _Problem(w=t.xgrid.trapezoid_weights(), h=t.xgrid.h, k=kpos, target=target, floor=floor_rel * target)
    return kkt_residual_arrays(P, np.maximum(b, P.floor[:, None]))


def objective_gradient(t: MeasureTable) -> np.ndarray:
    """Gradient of the discrete functional with respect to every table entry."""
    if np.any(t.b <= 0):
        raise ValueError("gradient needs strictly positive entries")
    P = _Problem(w=t.xgrid.trapezoid_weights(), h=t.xgrid.h, k=np.abs(t.k), target=2.0 * t.x, floor=np.zeros(t.xgrid.n))
    return _gradient(P, t.b)


# -- diagnostics --


def equipartition_residual(rep_or_table, rel_mass: float = 1e-12, skip: int = 0) -> EquipartitionResidual:
    """Per-frequency |moment - quotient| / (moment + quotient) and the global imbalance.

    Frequencies carrying less than ``rel_mass`` of the total mass are inactive.
    """
    t = rep_or_table.table if isinstance(rep_or_table, MinimizerReport) else rep_or_table
    parts = F_infty_parts(t, skip)
    lam = t.xgrid.integrate(t.b)
    total = float(np.sum(lam))
    active = lam >= rel_mass * total
    K, Q = parts.moment, parts.quotient
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(active, np.abs(K - Q) / (K + Q), np.nan)
    glob = abs(float(np.sum(K) - np.sum(Q)))
    return EquipartitionResidual(
        k=t.k.copy(), r_k=r, lambda_k=lam, active=active, moment=K, quotient=Q, global_residual=glob
    )


def support_lower_bound(rep_or_table, mass_tol: float = 1e-6) -> float:
    t = rep_or_table.table if isinstance(rep_or_table, MinimizerReport) else rep_or_table
    lam = t.xgrid.integrate(t.b)
    total = float(np.sum(lam))
    ok = lam > mass_tol * total
    if not np.any(ok):
        raise ValueError("no frequency carries more than mass_tol of the total mass")
    return float(np.min(np.abs(t.k[ok])))


def mass_below(t: MeasureTable, k_cut: float) -> float:
    """Fraction of the total mass on frequencies with |k| < k_cut."""
    lam = t.xgrid.integrate(t.b)
    return float(np.sum(lam[np.abs(t.k) < k_cut]) / np.sum(lam))


def dominant_frequency(t: MeasureTable) -> np.ndarray:
    """|k| carrying the largest share of nu_x at each node (folded over the sign of k)."""
    kpos, b = _fold(t.kgrid, t.b)
    return kpos[np.argmax(b, axis=1)]


def dominant_slope(t: MeasureTable, x_lo: float = 0.01, x_hi: float = 0.1) -> float:
    """Least-squares slope of log k_dom against log x on [x_lo, x_hi]."""
    sel = (t.x >= x_lo) & (t.x <= x_hi)
    if sel.sum() < 2:
        raise ValueError("fewer than two nodes in the fitting window")
    kd = dominant_frequency(t)
    slope, _ = np.polyfit(np.log(t.x[sel]), np.log(kd[sel]), 1)
    return float(slope)


def benamou_brenier(rho: MeasureTable, E: np.ndarray, skip: int = 0) -> float:
    """Quadrature of E^2 / (2 rho) with the perspective convention at rho = 0."""
    E = np.asarray(E, dtype=float)
    if E.shape != rho.b.shape:
        raise ValueError("E and rho must share grids")
    if np.any(rho.b < 0):
        raise ValueError("rho must be nonnegative")
    w = rho.xgrid.trapezoid_weights(skip)
    with np.errstate(divide="ignore", invalid="ignore"):
        dens = np.where(rho.b > 0, 0.5 * E**2 / rho.b, np.where(E == 0, 0.0, np.inf))
    total = float(np.sum(np.where(w[:, None] > 0, w[:, None] * dens, 0.0)))
    return total if np.isfinite(total) else math.inf


def quotient_term(t: MeasureTable) -> float:
    return float(np.sum(F_infty_parts(t).quotient))
