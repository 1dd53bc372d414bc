import math

import numpy as np
import pytest
from scipy.integrate import quad

from wrinkle.grids import KGrid, make_k_grid, make_x_grid
from wrinkle.measure import MeasureTable, bin_frequencies, dilate, eval_F_infty
from wrinkle.recovery import (
    OutOfPlane,
    RecoveryParams,
    amplitude_profile,
    bl_distance,
    build_in_plane,
    build_out_of_plane,
    build_recovery,
    choose_parameters,
    cutoff,
    mollifier_weights,
    mollify,
    omega_modulus,
    schedule_parameters,
    total_mass_closed_form,
    truncate,
)
from wrinkle.spectral import CoefficientSet, basis_derivative_matrix

LS = (8.0, 16.0, 32.0, 64.0)


def column(k0=1.0, n=200, end=1.0, values=None):
    xg = make_x_grid(n, (0.0, end))
    kg = KGrid(L_eff=np.pi / k0, k_max=k0, index=np.array([1]), symmetric=False)
    b = 2 * xg.nodes[:, None] if values is None else values(xg.nodes)[:, None]
    return MeasureTable(xg, kg, b)


@pytest.fixture(scope="module")
def fields(golden):
    return {L: build_recovery(golden.table, L) for L in LS}


# -- omega and the schedule --


def test_omega_at_zero():
    assert omega_modulus(column(), 0.0) == 0.0


def test_omega_without_derivative():
    assert omega_modulus(column(values=lambda x: 0 * x), 0.7) == 0.0


def test_omega_single_column():
    t = column(n=2000, end=1.3)
    h = t.xgrid.h
    # quotient density 1/(2x), integrated from the first node; the trapezoid
    # overshoots by about (h^2/12) |f'(h)| = 1/24 whatever h is
    err = omega_modulus(t, 0.5) - 0.5 * math.log(0.5 / h)
    assert 0 < err <= 1 / 24 + 1e-3


def test_omega_monotone_and_bounded(golden):
    t, _ = dilate(golden.table, 1.4)
    z = np.linspace(0, 1.4, 30)
    w = [omega_modulus(t, v) for v in z]
    assert np.all(np.diff(w) >= 0)
    assert omega_modulus(t, 1.4, lam_bar=1.3) <= 1.4**2 * eval_F_infty(golden.table)


def test_omega_negative_rejected():
    with pytest.raises(ValueError):
        omega_modulus(column(), -0.1)


def test_schedule_without_modulus():
    p = choose_parameters(lambda z: 0.0, 64.0)
    assert p.M == 8
    assert p.eps == pytest.approx(64 ** (-2 / 3) * 8 ** (7 / 8), rel=1e-14)
    assert p.eps == pytest.approx(0.3856, abs=5e-5)
    assert p.delta == p.eps / p.M
    assert p.lam == 1 + math.sqrt(p.eps)


@pytest.mark.parametrize("L", [8.0, 16.0, 20.0, 32.0, 50.0, 64.0, 100.0])
def test_schedule_period_window(L):
    p = choose_parameters(lambda z: 0.0, L)
    assert p.M ** 0.125 <= p.L0 < 2 * p.M ** 0.125
    assert p.n * p.L0 == L
    assert not p.window_widened


def test_schedule_M_nondecreasing_without_modulus():
    Ms = [choose_parameters(lambda z: 0.0, L).M for L in (8, 16, 32, 64, 128)]
    assert Ms == sorted(Ms)


def test_schedule_fixed_table_eps_decreasing(golden):
    ps = [schedule_parameters(golden.table, L) for L in (8, 16, 32, 64, 128)]
    assert all(b.eps < a.eps for a, b in zip(ps, ps[1:]))
    assert all(b.M >= a.M for a, b in zip(ps, ps[1:]))


def test_schedule_fallback_and_strict(golden):
    p = schedule_parameters(golden.table, 16.0)
    assert p.M == 2 and not p.omega_condition_met
    with pytest.raises(ValueError, match="admissible"):
        schedule_parameters(golden.table, 16.0, strict=True)


def test_schedule_rejects_tiny_L():
    with pytest.raises(ValueError):
        choose_parameters(lambda z: 0.0, 2.0)


# -- truncation --


def test_truncate_constant_moment():
    t = column(values=lambda x: 0 * x + 1.0, end=1.5)
    lam = 1.5
    tt = truncate(t, lam)
    window = t.x[(t.x > (lam + 1) / 2) & (t.x < lam)]
    assert tt.lam_bar == window[0]


def test_truncate_increasing_moment():
    lam = 1.5
    t = column(end=lam)
    tt = truncate(t, lam)
    window = t.x[(t.x > (lam + 1) / 2) & (t.x < lam)]
    assert tt.lam_bar == window[0]


def test_truncate_qualifying_node_and_freeze(golden):
    lam = 1.4
    t, _ = dilate(golden.table, lam)
    tt = truncate(t, lam)
    win = (t.x > (lam + 1) / 2) & (t.x < lam)
    mom = t.b @ t.k**2
    assert (lam + 1) / 2 < tt.lam_bar < lam
    i = int(np.flatnonzero(t.x == tt.lam_bar)[0])
    assert mom[i] <= mom[win].mean()
    assert np.all(mom[win & (t.x < tt.lam_bar)] > mom[win].mean())
    np.testing.assert_array_equal(tt.evaluate(np.array([tt.lam_bar + 0.3]))[0], tt.evaluate(np.array([tt.lam_bar]))[0])
    assert np.all(tt.evaluate(np.array([-0.5, 0.0])) == 0.0)


def test_truncate_coarse_grid():
    t = column(n=3, end=1.5)
    with pytest.raises(ValueError, match="coarse"):
        truncate(t, 1.5)


# -- mollification --


def _brute_force(tt, eps, x, j):
    def g(z):
        return float(tt.evaluate(np.array([z]))[0, j])

    kern = lambda z: math.exp(-abs(x - z) / eps) / (2 * eps)  # noqa: E731
    pts = list(tt.nodes[(tt.nodes > x - 30 * eps) & (tt.nodes < x + 30 * eps)]) + [x]
    lo, hi = min(x - 40 * eps, 0.0), max(x + 40 * eps, tt.lam_bar) + 40 * eps
    return quad(lambda z: kern(z) * g(z), lo, hi, points=sorted(set(pts)), limit=400, epsabs=1e-13, epsrel=1e-12)[0]


def test_mollify_matches_quadrature(rng):
    xg = make_x_grid(12, (0.0, 1.4))
    kg = make_k_grid(2.0, 3.2)
    w = rng.uniform(0.2, 1, size=(12, len(kg)))
    t = MeasureTable(xg, kg, 2 * xg.nodes[:, None] * w / w.sum(axis=1, keepdims=True))
    tt = truncate(t, 1.4)
    eps = 0.07
    x = np.array([-0.3, 0.0, 0.05, 0.4, 1.0, tt.lam_bar, 1.3])
    a = mollify(tt, eps, x).a
    for i, xv in enumerate(x):
        for j in range(len(kg)):
            assert a[i, j] == pytest.approx(_brute_force(tt, eps, xv, j), abs=1e-10)


@pytest.mark.parametrize("eps", [0.02, 0.05, 0.1])
def test_mollify_total_mass_closed_form(golden, eps):
    lam = 1.3
    tt = truncate(bin_frequencies(dilate(golden.table, lam)[0], 2.0), lam)
    x = make_x_grid(2000, (-1.0, 1.0)).nodes
    m = mollify(tt, eps, x)
    assert np.max(np.abs(m.a.sum(axis=1) - total_mass_closed_form(x, eps, tt.lam_bar))) <= 1e-12


def test_mollify_at_origin(golden):
    lam, eps = 1.3, 0.05
    tt = truncate(bin_frequencies(dilate(golden.table, lam)[0], 2.0), lam)
    A = amplitude_profile(mollify(tt, eps, np.array([0.0, 0.5]))).A
    assert A[0] == pytest.approx(0.5 * eps * (1 - math.exp(-tt.lam_bar / eps)), rel=1e-12)


def test_mollify_zero_table():
    t = column(values=lambda x: 0 * x, end=1.3)
    tt = truncate(t, 1.3)
    assert np.all(mollify(tt, 0.1, np.linspace(-1, 1, 11)).a == 0)


def test_mollify_constant_interior():
    c = 0.8
    t = column(values=lambda x: 0 * x + c, n=400, end=1.5)
    tt = truncate(t, 1.5)
    eps = 0.02
    x = np.linspace(10 * eps, 1.0, 50)
    assert np.max(np.abs(mollify(tt, eps, x).a[:, 0] - c)) <= math.exp(-10) * c


def test_mollify_derivatives_match_differences(golden):
    lam, eps = 1.3, 0.05
    tt = truncate(bin_frequencies(dilate(golden.table, lam)[0], 2.0), lam)
    x = np.linspace(0.11, 0.9, 7)
    d = 1e-5
    m0, mp, mm = (mollify(tt, eps, x + s) for s in (0.0, d, -d))
    np.testing.assert_allclose(m0.a_x, (mp.a - mm.a) / (2 * d), atol=1e-6)
    # the table's kinks make a_xx jump at nodes: compare away from them
    np.testing.assert_allclose(m0.a_xx, (mp.a - 2 * m0.a + mm.a) / d**2, atol=2e-3 * np.max(np.abs(m0.a_xx)))


def test_mollify_positive_for_positive_x(golden):
    lam = 1.3
    tt = truncate(bin_frequencies(dilate(golden.table, lam)[0], 2.0), lam)
    m = mollify(tt, 0.05, np.linspace(0.001, 1, 50))
    active = tt.values.sum(axis=0) > 0
    assert np.all(m.a[:, active] > 0)


def test_mollify_eps_positive():
    with pytest.raises(ValueError):
        mollifier_weights(np.array([0.0, 1.0]), np.array([0.5]), 0.0)


# -- amplitude, cutoff, out-of-plane --


def test_amplitude_single_column():
    eps = 0.05
    t = column(n=400, end=1.3)
    tt = truncate(t, 1.3)
    x = np.array([1.0])
    amp = amplitude_profile(mollify(tt, eps, x))
    slack = eps * math.exp(-1 / eps) + eps * math.exp((1 - tt.lam_bar) / eps)
    assert abs(amp.A[0] - 1.0) <= slack
    assert amp.f[0] == pytest.approx(1.0, abs=slack)


@pytest.mark.parametrize("L", LS)
def test_amplitude_bounds(fields, L):
    fld = fields[L]
    p, amp, x = fld.params, fld.stages["amplitude"], fld.xgrid.nodes
    e = p.eps
    pos = x > 0
    mx = np.maximum(x, e)
    assert np.all(mx[pos] / (2 * math.e) <= 2 * amp.A[pos])
    assert np.all(2 * amp.A[pos] <= 3 * mx[pos])
    f2 = amp.f**2
    # exact value from the closed form of the total mass
    np.testing.assert_allclose(f2[pos], 2 * x[pos] / total_mass_closed_form(x[pos], e, p.lam_bar), rtol=1e-12)
    upper = (x > p.lam_bar / 2) & (x <= 1)
    gap = math.exp(-1 / e) - math.exp((1 - p.lam_bar) / e)
    assert np.all(f2[upper] <= 1 + 0.5 * e * abs(gap) / (0.5 + 0.5 * e * gap))
    lower = (x >= p.M * e) & (x < 1)
    assert np.all(f2[lower] >= 1 - math.exp(-p.M) / (2 * p.M))
    assert np.all(f2[(x > 0) & (x < p.lam_bar / 2)] <= 1 + 1e-14)


def test_amplitude_upper_bound_small_eps(fields):
    # the simplified bound 1 + eps/8 needs small eps; here eps = 0.115
    fld = fields[64.0]
    x, f2 = fld.xgrid.nodes, fld.stages["amplitude"].f ** 2
    sel = x >= fld.params.lam_bar / 2
    assert np.all(f2[sel] <= 1 + fld.params.eps / 8)


def test_cutoff_profile():
    delta = 0.1
    x = np.linspace(-0.5, 0.5, 200001)
    s, s1, s2 = cutoff(x, delta)
    assert np.all(s[x <= delta] == 0) and np.all(s[x >= 2 * delta] == 1)
    assert np.all(np.diff(s) >= 0)
    C1, C2 = np.max(np.abs(s1)) * delta, np.max(np.abs(s2)) * delta**2
    assert C1 == pytest.approx(1.875, rel=1e-6)
    assert C2 == pytest.approx(10 / math.sqrt(3), rel=1e-6)
    assert max(C1, C2) <= 7
    np.testing.assert_allclose(np.gradient(s, x), s1, atol=1e-4 / delta)


@pytest.mark.parametrize("L", LS)
def test_out_of_plane_vanishes_below_delta(fields, L):
    fld = fields[L]
    below = fld.xgrid.nodes <= fld.params.delta
    assert np.all(fld.u.a[below] == 0) and np.all(fld.c_x[below] == 0) and np.all(fld.c_xx[below] == 0)


@pytest.mark.parametrize("L", LS)
def test_constraint_repair(fields, L):
    fld = fields[L]
    x = fld.xgrid.nodes
    psi, _, _ = cutoff(x, fld.params.delta)
    k = fld.u.kgrid.k
    np.testing.assert_allclose(0.5 * np.sum((k * fld.u.a) ** 2, axis=1), psi**2 * x, atol=1e-12)
    full = x >= 2 * fld.params.delta
    np.testing.assert_allclose(0.5 * np.sum((k * fld.u.a[full]) ** 2, axis=1), x[full], rtol=1e-12)


@pytest.mark.parametrize("L", [16.0, 64.0])
def test_coefficient_derivatives(fields, L):
    fld = fields[L]
    x = fld.xgrid.nodes
    sel = (x > 2.5 * fld.params.delta) & (x < 0.95)
    num = np.gradient(fld.u.a, x, axis=0)
    scale = np.max(np.abs(fld.c_x[sel]))
    assert np.max(np.abs(num[sel] - fld.c_x[sel])) <= 1e-3 * scale


def test_single_mode_out_of_plane():
    L0 = 2.0
    kg = make_k_grid(L0, np.pi / L0, symmetric=False)
    xg = make_x_grid(200, (0.0, 1.3))
    t = MeasureTable(xg, kg, 2 * xg.nodes[:, None])
    tt = truncate(t, 1.3)
    params = RecoveryParams(L=16.0, M=2, eps=0.1, delta=0.05, lam=1.3, L0=L0, n=8, lam_bar=tt.lam_bar)
    x = make_x_grid(100, (-1.0, 1.0)).nodes
    m = mollify(tt, params.eps, x)
    amp = amplitude_profile(m)
    oop = build_out_of_plane(m, amp, params)
    psi, _, _ = cutoff(x, params.delta)
    np.testing.assert_allclose(oop.coeffs.a[:, 0], psi * amp.f * np.sqrt(m.a[:, 0]) / (np.pi / L0), rtol=1e-14)


def test_negative_coefficients_rejected(fields):
    fld = fields[8.0]
    m = fld.stages["mollified"]
    bad = type(m)(x=m.x, kgrid=m.kgrid, a=-m.a, a_x=m.a_x, a_xx=m.a_xx, eps=m.eps)
    with pytest.raises(ValueError):
        build_out_of_plane(bad, fld.stages["amplitude"], fld.params)


# -- in-plane fields --


def test_in_plane_without_u_is_not_periodic():
    kg = make_k_grid(2.0, np.pi / 2)
    xg = make_x_grid(100, (-1.0, 1.0))
    z = np.zeros((xg.n, len(kg)))
    params = RecoveryParams(L=16.0, M=2, eps=0.1, delta=0.05, lam=1.3, L0=2.0, n=8)
    fld = build_in_plane(OutOfPlane(CoefficientSet(kg, z), z, z), params, xg, m=16)
    x = xg.nodes
    full = x >= 2 * params.delta
    np.testing.assert_allclose(fld.w2[full], x[full, None] * fld.ygrid.nodes[None, :], atol=1e-14)
    assert fld.defects["w2_abs"] == pytest.approx(2 * params.L0 * 1.0, rel=1e-12)


@pytest.mark.parametrize("L", LS)
def test_in_plane_periodic(fields, L):
    d = fields[L].defects
    assert d["w2_abs"] <= 1e-10 * np.max(np.abs(fields[L].w2))
    assert d["w1_rel"] <= 1e-8 and d["w2_rel"] <= 1e-8


@pytest.mark.parametrize("L", [8.0, 64.0])
def test_in_plane_derivatives(fields, L):
    fld = fields[L]
    x = fld.xgrid.nodes
    sel = (x > 2.5 * fld.params.delta) & (x < 0.95)
    for w, wx in ((fld.w1, fld.w1_x), (fld.w2, fld.w2_x)):
        num = np.gradient(w, x, axis=0)
        assert np.max(np.abs(num[sel] - wx[sel])) <= 1e-3 * max(np.max(np.abs(wx[sel])), 1.0)


def test_in_plane_resolution_check(fields):
    fld = fields[8.0]
    oop = OutOfPlane(fld.u, fld.c_x, fld.c_xx)
    with pytest.raises(ValueError):
        build_in_plane(oop, fld.params, fld.xgrid, m=2 * fld.u.kgrid.j_max)


# -- full pipeline --


@pytest.mark.parametrize("L", LS)
def test_pipeline_metadata(fields, L):
    fld = fields[L]
    p = fld.params
    assert fld.u.kgrid.spacing == pytest.approx(np.pi / p.L0, rel=1e-14)
    assert (p.lam + 1) / 2 < p.lam_bar < p.lam
    assert p.n * p.L0 == p.L
    assert fld.ygrid.L0 == p.L0


def test_pipeline_odd_nx(golden):
    with pytest.raises(ValueError):
        build_recovery(golden.table, 8.0, nx=201)


def test_bl_distance_decreases(fields, golden):
    d = [bl_distance(fields[L], golden.table) for L in LS]
    assert all(b < a for a, b in zip(d, d[1:]))


def test_bl_distance_zero_for_identical_tables(golden):
    from wrinkle.recovery import bl_distance_tables

    t = golden.table
    w = t.xgrid.trapezoid_weights()
    assert bl_distance_tables(t.x, w, t.k, t.b, t.x, w, t.k, t.b) == pytest.approx(0.0, abs=1e-12)
    # a unit point mass moved by a distance 0.3 costs at most 0.3
    k = np.array([1.0])
    d = bl_distance_tables(np.array([0.2]), np.ones(1), k, np.ones((1, 1)), np.array([0.5]), np.ones(1), k, np.ones((1, 1)))
    assert d == pytest.approx(0.3, abs=0.03)


def test_basis_sign_convention_positive(fields):
    fld = fields[16.0]
    assert np.all(fld.u.a >= 0)
    B = basis_derivative_matrix(fld.u.kgrid, fld.ygrid.nodes, 1)
    assert B.shape == (fld.ygrid.m, len(fld.u.kgrid))
