"""CSV/JSON files for tables, solver reports and displacement fields.

Floats are written with ``%.17g`` so files round-trip exactly and reruns are
byte-identical.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .grids import SCHEME, KGrid, make_x_grid
from .measure import MeasureTable

FMT = "%.17g"


def _fmt(v: float) -> str:
    return FMT % v


def _json_float(v: float):
    return v if math.isfinite(v) else str(v)


def dump_json(obj, path: Path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def table_metadata(t: MeasureTable) -> dict:
    return {
        "lambda": t.lam,
        "L_eff": t.kgrid.L_eff,
        "k_max": t.kgrid.k_max,
        "b_min": t.b_min,
        "scheme": SCHEME,
        "n_x": t.xgrid.n,
        "k_index": [int(j) for j in t.kgrid.index],
    }


def write_table(t: MeasureTable, csv_path: Path, extra: dict | None = None) -> Path:
    """CSV ``x,k,b,b_x`` (row-major by x) plus a JSON sidecar next to it."""
    csv_path = Path(csv_path)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "k", "b", "b_x"])
        for i, x in enumerate(t.x):
            for j, k in enumerate(t.k):
                w.writerow([_fmt(x), _fmt(k), _fmt(t.b[i, j]), _fmt(t.bx[i, j])])
    meta = table_metadata(t)
    if extra:
        meta.update(extra)
    side = csv_path.with_suffix(".json")
    dump_json(meta, side)
    return side


def read_table(csv_path: Path) -> MeasureTable:
    csv_path = Path(csv_path)
    side = csv_path.with_suffix(".json")
    if not csv_path.exists():
        raise FileNotFoundError(f"measure file {csv_path} not found")
    if not side.exists():
        raise FileNotFoundError(f"sidecar {side} not found")
    meta = json.loads(side.read_text())
    if meta.get("scheme", SCHEME) != SCHEME:
        raise ValueError(f"table uses difference scheme {meta['scheme']!r}, expected {SCHEME!r}")
    data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    index = np.array(meta["k_index"], dtype=int)
    n_x, n_k = int(meta["n_x"]), len(index)
    if data.shape != (n_x * n_k, 4):
        raise ValueError(f"{csv_path}: expected {n_x * n_k} rows of 4 columns, got {data.shape}")
    xgrid = make_x_grid(n_x, (0.0, float(meta["lambda"])))
    kgrid = KGrid(L_eff=float(meta["L_eff"]), k_max=float(meta["k_max"]), index=index, symmetric=bool(np.any(index < 0)))
    x = data[:, 0].reshape(n_x, n_k)[:, 0]
    if not np.allclose(x, xgrid.nodes, rtol=1e-12, atol=1e-15):
        raise ValueError(f"{csv_path}: x column does not match the declared grid")
    return MeasureTable(xgrid, kgrid, data[:, 2].reshape(n_x, n_k), float(meta.get("b_min", 0.0)))


def report_dict(rep, residuals, k_min: float | None) -> dict:
    """Solver report: objective, stationarity and per-frequency equipartition."""
    items = []
    for k, r, lam, act in zip(residuals.k, residuals.r_k, residuals.lambda_k, residuals.active):
        if act:
            items.append({"k": float(k), "r_k": _json_float(float(r)), "lambda_k": float(lam)})
    return {
        "objective": float(rep.objective),
        "kkt_residual": float(rep.kkt_residual),
        "converged": bool(rep.converged),
        "iterations": int(rep.iterations),
        "k_min": None if k_min is None else float(k_min),
        "global_equipartition_residual": float(residuals.global_residual),
        "residuals": items,
    }


def write_samples(values: np.ndarray, x: np.ndarray, y: np.ndarray, path: Path, name: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", name])
        for i, xv in enumerate(x):
            for j, yv in enumerate(y):
                w.writerow([_fmt(xv), _fmt(yv), _fmt(values[i, j])])


def write_field(fld, outdir: Path, stem: str = "recovery") -> list[Path]:
    """w1/w2 sample triplets, coefficient table ``x,k,a`` and parameter JSON."""
    outdir = Path(outdir)
    x, y = fld.xgrid.nodes, fld.ygrid.nodes
    paths = [outdir / f"{stem}_w1.csv", outdir / f"{stem}_w2.csv", outdir / f"{stem}_coeffs.csv", outdir / f"{stem}_params.json"]
    write_samples(fld.w1, x, y, paths[0], "w1")
    write_samples(fld.w2, x, y, paths[1], "w2")
    with open(paths[2], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "k", "a"])
        k = fld.u.kgrid.k
        for i, xv in enumerate(x):
            for j, kv in enumerate(k):
                w.writerow([_fmt(xv), _fmt(kv), _fmt(fld.u.a[i, j])])
    meta = {key: _json_float(v) if isinstance(v, float) else v for key, v in fld.params.to_dict().items()}
    meta["periodicity_defects"] = fld.defects
    meta["nx"] = fld.xgrid.n
    meta["m"] = fld.ygrid.m
    dump_json(meta, paths[3])
    return paths
