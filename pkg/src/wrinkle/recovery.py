"""Finite-thickness displacement fields built from a limit table.

Pipeline for a table on [0, 1] and a thickness parameter L:

1. choose (M, eps, delta, lam, L0, n) from the modulus omega of the table;
2. stretch the table to [0, lam] and move its mass onto the comb (pi/L0) Z;
3. cut it off at a node lam_bar in ((lam+1)/2, lam) and freeze it beyond;
4. convolve with exp(-|x|/eps)/(2 eps) in closed form (piecewise linear data);
5. rescale the resulting coefficients so that the y-average of u_y^2 is
   2 psi^2 x, with psi a C^2 cutoff switching on between delta and 2 delta;
6. build the in-plane fields so that both are 2 L0-periodic in y.

All x-derivatives are carried analytically through every stage, so the
periodicity identities hold to rounding error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .grids import KGrid, XGrid, make_x_grid
from .measure import MeasureTable, bin_frequencies, dilate, quotient_density
from .spectral import CoefficientSet, YGrid, basis_derivative_matrix, make_y_grid, primitive_y

# -- parameter schedule --


@dataclass(frozen=True)
class RecoveryParams:
    L: float
    M: int
    eps: float
    delta: float
    lam: float
    L0: float
    n: int
    lam_bar: float = math.nan
    omega_condition_met: bool = True
    window_widened: bool = False

    def to_dict(self) -> dict:
        return {
            "L": self.L,
            "M": self.M,
            "eps": self.eps,
            "delta": self.delta,
            "lambda": self.lam,
            "lambda_bar": self.lam_bar,
            "L0": self.L0,
            "n": self.n,
            "omega_condition_met": self.omega_condition_met,
            "window_widened": self.window_widened,
        }


def omega_modulus(t: MeasureTable, z: float, lam_bar: float | None = None) -> float:
    """Quadrature of sum_k b_x^2 / (4 k^2 b) over x in (0, min(z, lam_bar)).

    Trapezoid from the first stored node; a cut inside a cell interpolates the
    running integral linearly.
    """
    if z < 0:
        raise ValueError("z must be nonnegative")
    top = min(z, lam_bar if lam_bar is not None else t.lam)
    q = quotient_density(t.b, t.bx, t.k).sum(axis=1)
    if not np.all(np.isfinite(q)):
        return math.inf
    cum = t.xgrid.cumulative(q)
    return float(np.interp(top, t.x, cum, left=0.0))


def choose_parameters(omega, L: float, strict: bool = False) -> RecoveryParams:
    """Schedule from a modulus ``omega`` (callable z -> value).

    M is the largest integer in [2, sqrt(L)] with omega(2 M^2 L^(-2/3)) <= 1/M.
    Without such an M, ``strict`` raises; otherwise M = 2 is used and flagged.
    """
    if not L > 0:
        raise ValueError("L must be positive")
    admissible = [M for M in range(2, int(math.floor(math.sqrt(L))) + 1) if omega(2.0 * M * M * L ** (-2.0 / 3.0)) <= 1.0 / M]
    if admissible:
        M, met = max(admissible), True
    elif strict:
        raise ValueError(f"no admissible M for L={L}")
    else:
        M, met = 2, False
    eps = L ** (-2.0 / 3.0) * M ** (7.0 / 8.0)
    if eps >= 1.0:
        raise ValueError(f"L={L} too small: eps={eps:.3g} >= 1")
    lo, hi = M ** 0.125, 2.0 * M ** 0.125
    # smallest n with L/n < hi
    n = int(math.floor(L / hi)) + 1
    widened = L / n < lo
    if widened:
        # no integer n lands in the window; take the n whose L0 is closest to it
        n = max(1, int(round(L / lo)))
    L0 = L / n
    return RecoveryParams(
        L=float(L), M=M, eps=eps, delta=eps / M, lam=1.0 + math.sqrt(eps), L0=L0, n=n,
        omega_condition_met=met, window_widened=widened,
    )


def schedule_parameters(t: MeasureTable, L: float, strict: bool = False) -> RecoveryParams:
    """Schedule for table ``t``; omega is evaluated on ``t`` itself.

    Stretching and frequency binning never increase omega, so this is a
    conservative stand-in for the modulus of the final truncated table.
    """
    return choose_parameters(lambda z: omega_modulus(t, z), L, strict)


# -- truncation and mollification --


@dataclass(frozen=True)
class TruncatedTable:
    """Piecewise linear extension: 0 for x <= 0, nodal values up to lam_bar, frozen after."""

    kgrid: KGrid
    nodes: np.ndarray  # 0 followed by the stored nodes up to lam_bar
    values: np.ndarray  # (len(nodes), n_k), first row zero
    lam_bar: float

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.empty((len(x), self.values.shape[1]))
        for j in range(self.values.shape[1]):
            out[:, j] = np.interp(x, self.nodes, self.values[:, j], left=0.0, right=self.values[-1, j])
        return out

    def k2_moment(self) -> np.ndarray:
        return self.values @ self.kgrid.k**2


def truncate(t: MeasureTable, lam: float) -> TruncatedTable:
    """Cut at the smallest node in ((lam+1)/2, lam) whose k^2-moment is at most the window mean."""
    x = t.x
    window = (x > 0.5 * (lam + 1.0)) & (x < lam)
    if not np.any(window):
        raise ValueError("no grid node inside the truncation window: grid too coarse")
    moment = t.b @ t.k**2
    mean = float(np.mean(moment[window]))
    # the window minimum always qualifies; the slack absorbs rounding in the mean
    ok = np.flatnonzero(window & (moment <= mean + 1e-12 * abs(mean)))
    i = int(ok[0])
    nodes = np.concatenate([[0.0], x[: i + 1]])
    values = np.vstack([np.zeros(len(t.kgrid)), t.b[: i + 1]])
    return TruncatedTable(kgrid=t.kgrid, nodes=nodes, values=values, lam_bar=float(x[i]))


def mollifier_weights(nodes: np.ndarray, x: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact weights of the exponential kernel on piecewise linear data.

    For nodal values v (first node value 0, constant continuation after the last
    node, zero before the first), ``(W_left + W_right) @ v`` is the convolution at
    ``x``; ``W_left`` collects the part of the integral over z <= x.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=float)[:, None]
    zs, ze = nodes[None, :-1], nodes[None, 1:]
    dz = ze - zs
    r = eps / dz
    nx, nn = x.shape[0], len(nodes)
    WL = np.zeros((nx, nn))
    WR = np.zeros((nx, nn))

    def phi0(z):
        return (ze - z) / dz

    def phi1(z):
        return (z - zs) / dz

    # part of each segment left of x
    p, q = zs, np.minimum(ze, x)
    has = zs < x
    Eq = np.exp(np.minimum(q - x, 0.0) / eps)
    Ep = np.exp(np.minimum(p - x, 0.0) / eps)
    c0 = 0.5 * (Eq * (phi0(q) + r) - Ep * (phi0(p) + r))
    c1 = 0.5 * (Eq * (phi1(q) - r) - Ep * (phi1(p) - r))
    WL[:, :-1] += np.where(has, c0, 0.0)
    WL[:, 1:] += np.where(has, c1, 0.0)
    # part right of x
    p, q = np.maximum(zs, x), ze
    has = ze > x
    Fp = np.exp(np.minimum(x - p, 0.0) / eps)
    Fq = np.exp(np.minimum(x - q, 0.0) / eps)
    c0 = 0.5 * (Fp * (phi0(p) - r) - Fq * (phi0(q) - r))
    c1 = 0.5 * (Fp * (phi1(p) + r) - Fq * (phi1(q) + r))
    WR[:, :-1] += np.where(has, c0, 0.0)
    WR[:, 1:] += np.where(has, c1, 0.0)
    # frozen tail beyond the last node
    top = nodes[-1]
    xv = x[:, 0]
    WR[:, -1] += np.where(xv <= top, 0.5 * np.exp(np.minimum(xv - top, 0.0) / eps), 0.5)
    WL[:, -1] += np.where(xv > top, 0.5 * (1.0 - np.exp(np.minimum(top - xv, 0.0) / eps)), 0.0)
    return WL, WR


@dataclass(frozen=True)
class Mollified:
    x: np.ndarray
    kgrid: KGrid
    a: np.ndarray
    a_x: np.ndarray
    a_xx: np.ndarray
    eps: float


def mollify(tt: TruncatedTable, eps: float, x: np.ndarray) -> Mollified:
    """Convolution of the extended table with exp(-|x|/eps)/(2 eps) and its first two x-derivatives."""
    WL, WR = mollifier_weights(tt.nodes, x, eps)
    left, right = WL @ tt.values, WR @ tt.values
    a = left + right
    a_x = (right - left) / eps
    # the kernel's second derivative is rho/eps^2 minus a point mass of weight 1/eps^2
    a_xx = (a - tt.evaluate(x)) / eps**2
    return Mollified(x=np.asarray(x, dtype=float), kgrid=tt.kgrid, a=a, a_x=a_x, a_xx=a_xx, eps=eps)


def total_mass_closed_form(x: np.ndarray, eps: float, lam_bar: float) -> np.ndarray:
    """sum_k a(x, k) when the row sums of the table are exactly 2x up to lam_bar."""
    x = np.asarray(x, dtype=float)
    return 2.0 * x * (x >= 0) + eps * (np.exp(-np.abs(x) / eps) - np.exp((x - lam_bar) / eps))


# -- amplitude and cutoff --


@dataclass(frozen=True)
class Amplitude:
    A: np.ndarray
    A_x: np.ndarray
    A_xx: np.ndarray
    f: np.ndarray
    f_x: np.ndarray
    f_xx: np.ndarray


def amplitude_profile(m: Mollified) -> Amplitude:
    """A = sum_k a / 2 and f = sqrt(x / A) for x > 0 (zero otherwise), with derivatives."""
    A = 0.5 * m.a.sum(axis=1)
    A1 = 0.5 * m.a_x.sum(axis=1)
    A2 = 0.5 * m.a_xx.sum(axis=1)
    x = m.x
    pos = x > 0
    if np.any(A[pos] <= 0):
        raise ValueError("nonpositive amplitude at some x > 0")
    f = np.zeros_like(x)
    f1 = np.zeros_like(x)
    f2 = np.zeros_like(x)
    xp, Ap, A1p, A2p = x[pos], A[pos], A1[pos], A2[pos]
    fp = np.sqrt(xp / Ap)
    # log f = (log x - log A) / 2
    l1 = 0.5 / xp - 0.5 * A1p / Ap
    l2 = -0.5 / xp**2 - 0.5 * A2p / Ap + 0.5 * (A1p / Ap) ** 2
    f[pos] = fp
    f1[pos] = fp * l1
    f2[pos] = fp * (l1**2 + l2)
    return Amplitude(A=A, A_x=A1, A_xx=A2, f=f, f_x=f1, f_xx=f2)


def cutoff(x: np.ndarray, delta: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """C^2 step 6t^5 - 15t^4 + 10t^3 in t = (x - delta)/delta: 0 below delta, 1 above 2 delta."""
    t = np.clip((np.asarray(x, dtype=float) - delta) / delta, 0.0, 1.0)
    s = t**3 * (10.0 - 15.0 * t + 6.0 * t**2)
    s1 = 30.0 * t**2 * (1.0 - t) ** 2 / delta
    s2 = 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t) / delta**2
    return s, s1, s2


# -- fields --


@dataclass(frozen=True)
class OutOfPlane:
    """Coefficients of u and their first two x-derivatives on the x-grid."""

    coeffs: CoefficientSet
    c_x: np.ndarray
    c_xx: np.ndarray


def build_out_of_plane(m: Mollified, amp: Amplitude, params: RecoveryParams) -> OutOfPlane:
    """u = psi f u_hat, where u_hat has coefficients sqrt(a)/|k| (all taken positive)."""
    if np.any(m.a < 0):
        raise ValueError("negative mollified coefficient")
    pos = m.a > 0
    s = np.sqrt(m.a)
    with np.errstate(divide="ignore", invalid="ignore"):
        s1 = np.where(pos, m.a_x / (2.0 * s), 0.0)
        s2 = np.where(pos, m.a_xx / (2.0 * s) - m.a_x**2 / (4.0 * s**3), 0.0)
    psi, psi1, psi2 = cutoff(m.x, params.delta)
    P = psi * amp.f
    P1 = psi1 * amp.f + psi * amp.f_x
    P2 = psi2 * amp.f + 2.0 * psi1 * amp.f_x + psi * amp.f_xx
    inv_k = 1.0 / np.abs(m.kgrid.k)
    c = P[:, None] * s * inv_k
    c1 = (P1[:, None] * s + P[:, None] * s1) * inv_k
    c2 = (P2[:, None] * s + 2.0 * P1[:, None] * s1 + P[:, None] * s2) * inv_k
    return OutOfPlane(coeffs=CoefficientSet(m.kgrid, c), c_x=c1, c_xx=c2)


@dataclass(frozen=True)
class DisplacementField:
    """Samples of (w1, w2) and coefficients of u on an x-grid times one y-period.

    ``w1_x`` and ``w2_x`` are exact x-derivatives when known (recovery fields);
    ``c_x``/``c_xx`` likewise for the coefficients of u.
    """

    xgrid: XGrid
    ygrid: YGrid
    u: CoefficientSet
    w1: np.ndarray
    w2: np.ndarray
    c_x: np.ndarray | None = None
    c_xx: np.ndarray | None = None
    w1_x: np.ndarray | None = None
    w2_x: np.ndarray | None = None
    params: RecoveryParams | None = None
    defects: dict = field(default_factory=dict)
    stages: dict = field(default_factory=dict, repr=False)


def _sq(q: np.ndarray) -> np.ndarray:
    return q[..., None]


def build_in_plane(oop: OutOfPlane, params: RecoveryParams, xgrid: XGrid, m: int | None = None) -> DisplacementField:
    """In-plane fields from u; y-primitives are exact per Fourier mode."""
    kg = oop.coeffs.kgrid
    if m is None:
        m = max(16, 8 * kg.j_max)
    if m <= 4 * kg.j_max:
        raise ValueError(f"m={m} cannot resolve squared products of mode {kg.j_max}")
    yg = make_y_grid(params.L0, m)
    y = yg.nodes
    y_all = np.concatenate([y, [-params.L0, params.L0]])
    x = xgrid.nodes
    L2 = params.L**2

    B0 = basis_derivative_matrix(kg, y, 0).T
    B1 = basis_derivative_matrix(kg, y, 1).T
    c, c1, c2 = oop.coeffs.a, oop.c_x, oop.c_xx
    ux, uy = c1 @ B0, c @ B1
    uxy, uxx, uxxy = c1 @ B1, c2 @ B0, c2 @ B1

    psi, psi1, psi2 = cutoff(x, params.delta)
    Q0 = psi**2 * x
    Q1 = 2.0 * psi * psi1 * x + psi**2
    Q2 = 2.0 * psi1**2 * x + 2.0 * psi * psi2 * x + 4.0 * psi * psi1

    L0 = params.L0

    def prim(h):
        return primitive_y(h, L0, y_all)

    mean_uxuy = np.mean(ux * uy, axis=1)
    P1 = prim(uy**2)
    P2 = prim(uy * uxy)
    P3 = prim(uxy**2 + uy * uxxy)
    Bfun = 0.5 * P1.periodic_mean - xgrid.cumulative(mean_uxuy)
    B1fun = P2.periodic_mean - mean_uxuy
    B2fun = P3.periodic_mean - np.mean(uxx * uy + ux * uxy, axis=1)

    w2_all = _sq(Q0) * y_all + _sq(Bfun) - 0.5 * P1.values
    w2x = _sq(Q1) * y + _sq(B1fun) - P2.values[:, :m]

    yy = y_all**2 / 2.0
    G = (
        _sq(Q1 - P2.mean) * yy
        + _sq(B1fun) * y_all
        - prim(P2.periodic[:, :m]).values
        + prim(ux * uy).values
    )
    Gx = (
        _sq(Q2 - P3.mean) * yy
        + _sq(B2fun) * y_all
        - prim(P3.periodic[:, :m]).values
        + prim(uxx * uy + ux * uxy).values
    )
    w1_all = _sq(x) - G / L2
    w1x = 1.0 - Gx[:, :m] / L2

    w1, w2 = w1_all[:, :m], w2_all[:, :m]
    d1 = w1_all[:, -1] - w1_all[:, -2]
    d2 = w2_all[:, -1] - w2_all[:, -2]
    scale1 = max(np.max(np.abs(G)) / L2, np.finfo(float).tiny)
    scale2 = max(np.max(np.abs(w2)), np.finfo(float).tiny)
    defects = {
        "w1_abs": float(np.max(np.abs(d1))),
        "w2_abs": float(np.max(np.abs(d2))),
        "w1_rel": float(np.max(np.abs(d1)) / scale1),
        "w2_rel": float(np.max(np.abs(d2)) / scale2),
        "w1_rel_sup": float(np.max(np.abs(d1)) / max(np.max(np.abs(w1)), np.finfo(float).tiny)),
    }
    return DisplacementField(
        xgrid=xgrid, ygrid=yg, u=oop.coeffs, w1=w1, w2=w2, c_x=c1, c_xx=c2,
        w1_x=w1x, w2_x=w2x, params=params, defects=defects,
    )


def build_recovery(t: MeasureTable, L: float, nx: int = 2000, m: int | None = None, strict: bool = False) -> DisplacementField:
    """Full pipeline from a feasible table on [0, 1] to displacement fields on [-1, 1] x one period."""
    if nx % 2:
        raise ValueError("nx must be even (Simpson quadrature in x)")
    params = schedule_parameters(t, L, strict=strict)
    stretched, _ = dilate(t, params.lam)
    binned = bin_frequencies(stretched, params.L0)
    tt = truncate(binned, params.lam)
    params = replace(params, lam_bar=tt.lam_bar)
    xgrid = make_x_grid(nx, (-1.0, 1.0))
    moll = mollify(tt, params.eps, xgrid.nodes)
    amp = amplitude_profile(moll)
    oop = build_out_of_plane(moll, amp, params)
    fld = build_in_plane(oop, params, xgrid, m)
    stages = {"stretched": stretched, "binned": binned, "truncated": tt, "mollified": moll, "amplitude": amp}
    return replace(fld, stages=stages)


def step1_prefactor(params: RecoveryParams) -> float:
    """eps (e^((1 - lam_bar)/eps) - e^((-1 - lam_bar)/eps)) / (lam - 1)."""
    e, lb = params.eps, params.lam_bar
    return e * (math.exp((1.0 - lb) / e) - math.exp((-1.0 - lb) / e)) / (params.lam - 1.0)


# -- symmetries and distances --


def translate_y(fld: DisplacementField, shift: float) -> DisplacementField:
    """The same field shifted by ``shift`` in y (u(x, y + shift) etc.)."""
    kg = fld.u.kgrid
    if not kg.symmetric:
        raise ValueError("translation needs both sine and cosine modes")
    idx = kg.index
    pos = np.flatnonzero(idx > 0)
    neg = np.searchsorted(idx, -idx[pos])
    theta = kg.k[pos] * shift

    def rotate(c):
        if c is None:
            return None
        out = np.array(c, dtype=float, copy=True)
        sp, cn = c[:, pos], c[:, neg]
        out[:, pos] = sp * np.cos(theta) - cn * np.sin(theta)
        out[:, neg] = sp * np.sin(theta) + cn * np.cos(theta)
        return out

    m = fld.ygrid.m
    omega = np.pi / fld.ygrid.L0 * np.fft.fftfreq(m, d=1.0 / m)
    phase = np.exp(1j * omega * shift)
    phase[m // 2] = np.cos(omega[m // 2] * shift)

    def shift_samples(v):
        if v is None:
            return None
        return np.real(np.fft.ifft(np.fft.fft(v, axis=-1) * phase, axis=-1))

    coeffs = CoefficientSet(kg, rotate(fld.u.a), fld.u.a0)
    return replace(
        fld, u=coeffs, c_x=rotate(fld.c_x), c_xx=rotate(fld.c_xx),
        w1=shift_samples(fld.w1), w2=shift_samples(fld.w2),
        w1_x=shift_samples(fld.w1_x), w2_x=shift_samples(fld.w2_x),
    )


def _cell_masses(x: np.ndarray, weights: np.ndarray, dens: np.ndarray, edges: np.ndarray) -> np.ndarray:
    cell = np.clip(np.searchsorted(edges, x, side="left") - 1, 0, len(edges) - 2)
    out = np.zeros((len(edges) - 1, dens.shape[1]))
    np.add.at(out, cell, weights[:, None] * dens)
    return out


def bl_distance_tables(
    x1: np.ndarray, w1: np.ndarray, k1: np.ndarray, d1: np.ndarray,
    x2: np.ndarray, w2: np.ndarray, k2: np.ndarray, d2: np.ndarray,
    n_cells: int = 40, domain: tuple[float, float] = (0.0, 1.0),
) -> float:
    """Bounded-Lipschitz distance between two coarse-grained tables.

    Each measure sum_j d(x, k_j) w(x) dx delta_{k_j} is lumped onto (x-cell
    centre, k_j) over the union of both k sets; the dual problem
    sup { int phi d(mu1 - mu2) : |phi| <= 1, Lip(phi) <= 1 in the l1 metric }
    is then an LP on the tensor grid with neighbour constraints.
    """
    from scipy.optimize import linprog
    from scipy import sparse

    ks = np.union1d(k1, k2)
    edges = np.linspace(domain[0], domain[1], n_cells + 1)
    xc = 0.5 * (edges[1:] + edges[:-1])
    diff = np.zeros((n_cells, len(ks)))
    diff[:, np.searchsorted(ks, k1)] += _cell_masses(x1, w1, d1, edges)
    diff[:, np.searchsorted(ks, k2)] -= _cell_masses(x2, w2, d2, edges)
    nk = len(ks)
    idx = np.arange(n_cells * nk).reshape(n_cells, nk)
    rows, cols, vals, rhs = [], [], [], []
    r = 0
    for a, b, dist in (
        (idx[1:, :].ravel(), idx[:-1, :].ravel(), np.full((n_cells - 1) * nk, xc[1] - xc[0])),
        (idx[:, 1:].ravel(), idx[:, :-1].ravel(), np.tile(np.diff(ks), n_cells)),
    ):
        for sign in (1.0, -1.0):
            n = len(a)
            rr = r + np.arange(n)
            rows += [rr, rr]
            cols += [a, b]
            vals += [np.full(n, sign), np.full(n, -sign)]
            rhs.append(dist)
            r += n
    A = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(r, n_cells * nk))
    res = linprog(-diff.ravel(), A_ub=A, b_ub=np.concatenate(rhs), bounds=(-1.0, 1.0), method="highs")
    if res.status != 0:
        raise RuntimeError(f"bounded-Lipschitz LP failed: {res.message}")
    return float(-res.fun)


def bl_distance(fld: DisplacementField, t: MeasureTable, n_cells: int = 40) -> float:
    """Distance between the measure k^2 c_k^2 dx delta_k carried by u and the table ``t``."""
    xg = fld.xgrid
    pos = xg.nodes > 0
    wf = np.full(xg.n, xg.h)
    dens = (fld.u.kgrid.k * fld.u.a) ** 2
    wt = t.xgrid.trapezoid_weights()
    return bl_distance_tables(
        xg.nodes[pos], wf[pos], fld.u.kgrid.k, dens[pos],
        t.x, wt, t.k, t.b, n_cells=n_cells,
    )
