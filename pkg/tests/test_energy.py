import csv

import numpy as np
import pytest
from dataclasses import replace

from wrinkle.energy import (
    GAP_FIELDS,
    bending_terms,
    bending_terms_sampled,
    cutoff_residual,
    eval_F_L,
    flat_field,
    gamma_gap,
    integrate_x,
    limit_density_table,
)
from wrinkle.grids import make_x_grid
from wrinkle.measure import eval_F_infty
from wrinkle.recovery import build_recovery, step1_prefactor, translate_y

LS = (8.0, 16.0, 32.0, 64.0)


@pytest.fixture(scope="module")
def fields(golden):
    return {L: build_recovery(golden.table, L) for L in LS}


@pytest.mark.parametrize("L", [1.0, 8.0, 64.0])
def test_flat_state(L):
    eb = eval_F_L(flat_field(L), L)
    assert eb.t1 == pytest.approx(0.0, abs=1e-12 * L**2)
    assert eb.t2 == pytest.approx(2 * L**2 / 3, rel=1e-12)
    assert eb.t3 == eb.t4 == eb.t5 == 0.0
    assert eb.total == pytest.approx(L**2 / 3, abs=1e-9 * L**2)


def test_zero_displacement():
    L = 8.0
    fld = flat_field(L)
    fld = replace(fld, w1=np.zeros_like(fld.w1))
    eb = eval_F_L(fld, L)
    assert eb.t1 == pytest.approx(2 * L**2, rel=1e-12)
    assert eb.total == pytest.approx(2 * L**2 + L**2 / 3, rel=1e-12)


def test_simpson_with_extrapolated_endpoint():
    g = make_x_grid(100, (-1.0, 1.0))
    x = g.nodes
    assert integrate_x(x**2, g) == pytest.approx(2 / 3, rel=1e-14)
    assert integrate_x(np.exp(x), g) == pytest.approx(np.e - 1 / np.e, rel=1e-7)
    with pytest.raises(ValueError):
        integrate_x(x[:-1], make_x_grid(99, (-1.0, 1.0)))


@pytest.mark.parametrize("L", LS)
def test_terms_nonnegative_and_total(fields, L):
    eb = eval_F_L(fields[L], L)
    for v in (eb.t1, eb.t2, eb.t3, eb.t4, eb.t5):
        assert v >= 0
    assert eb.total == eb.t1 + eb.offset + eb.t2 + eb.t3 + eb.t4 + eb.t5
    assert eb.offset == -(L**2) / 3


@pytest.mark.parametrize("L", LS)
def test_shear_term_vanishes(fields, L):
    assert eval_F_L(fields[L], L).t3 <= 1e-10


@pytest.mark.parametrize("L", LS)
def test_membrane_y_residual(fields, L):
    fld = fields[L]
    eb = eval_F_L(fld, L)
    d = fld.params.delta
    excess = eb.t2 + eb.offset
    # t2 + offset = L^2 int_0^{2 delta} (1 - psi^2)^2 x^2 dx
    assert excess == pytest.approx(cutoff_residual(fld, L), abs=1e-9 * L**2)
    assert excess <= 8 * L**2 * d**3 / 3 + 1e-9 * L**2


@pytest.mark.parametrize("L", [8.0, 32.0])
def test_translation_invariance(fields, L):
    eb = eval_F_L(fields[L], L)
    for shift in (0.37, -1.1, fields[L].params.L0):
        moved = eval_F_L(translate_y(fields[L], shift), L)
        assert moved.total == pytest.approx(eb.total, abs=1e-9 * L**2)
        assert moved.t4 == pytest.approx(eb.t4, rel=1e-12)


@pytest.mark.parametrize("L", LS)
def test_bending_paths_agree(fields, L):
    a = bending_terms(fields[L], L)
    b = bending_terms_sampled(fields[L], L)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-9)


def test_aliasing_rejected(fields):
    fld = fields[8.0]
    from wrinkle.spectral import make_y_grid

    m = 2 * fld.u.kgrid.j_max + 2
    bad = replace(fld, ygrid=make_y_grid(fld.ygrid.L0, m), w1=fld.w1[:, :m], w2=fld.w2[:, :m])
    with pytest.raises(ValueError, match="alias"):
        eval_F_L(bad, 8.0)


@pytest.mark.parametrize("L", LS)
def test_bending_bounded_by_stretched_binned_measure(fields, L):
    # u carries the stretched, binned and mollified measure; its bending term is
    # controlled by that measure's energy on [0, lam], not by the source energy
    fld = fields[L]
    ref = eval_F_infty(fld.stages["binned"])
    assert eval_F_L(fld, L).t4 <= ref * (1 + step1_prefactor(fld.params))


@pytest.mark.parametrize("L", LS)
def test_lower_bound_chain(fields, L):
    fld = fields[L]
    eb = eval_F_L(fld, L)
    assert eb.total >= eb.t4
    # t4 is the limit energy of the measure carried by u, sampled on the x-grid
    assert eb.t4 >= eval_F_infty(limit_density_table(fld)) - 1e-8


def test_gamma_gap_report(golden, tmp_path):
    rep = gamma_gap(golden.table, [8.0, 16.0], with_distance=False)
    assert len(rep.rows) == 2
    assert rep.verdict()["positive"]
    path = tmp_path / "gap.csv"
    rep.write_csv(path)
    rows = list(csv.reader(open(path)))
    assert tuple(rows[0]) == GAP_FIELDS and len(rows) == 3
    r = rep.rows[0]
    assert float(rows[1][-1]) == r.gap
    assert r.gap == pytest.approx(r.breakdown.total - eval_F_infty(golden.table), rel=1e-15)
    assert abs(r.t2_excess) <= 1e-9 * r.L**2


def test_gamma_gap_infinite_source():
    from wrinkle.grids import KGrid
    from wrinkle.measure import MeasureTable

    xg = make_x_grid(10)
    kg = KGrid(L_eff=np.pi, k_max=1.0, index=np.array([1]), symmetric=False)
    b = 2 * xg.nodes[:, None].copy()
    b[3] = 0.0
    with pytest.raises(ValueError):
        gamma_gap(MeasureTable(xg, kg, b), [8.0])
