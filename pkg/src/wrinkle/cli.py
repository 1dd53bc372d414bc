"""Command-line front end: ``wrinkle {solve,recover,energy,gamma,check}``.

Parameters come from defaults, then an optional JSON ``--config`` file, then
flags (flags win). Exit codes: 0 ok, 1 numerical failure, 2 usage/config.
"""

from __future__ import annotations

import os
import sys

# thread caps must be set before numpy loads its BLAS
_threads = os.environ.get("WRINKLE_THREADS")
if _threads is not None and _threads.isdigit() and int(_threads) > 0:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[_var] = _threads

import argparse  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

log = logging.getLogger("wrinkle")


class ConfigError(Exception):
    pass


# name -> (type, default, validator or None)
SOLVE_KEYS = {
    "nx": (int, 200, lambda v: v >= 2),
    "kmax": (float, 12.0, lambda v: v > 0),
    "L_eff": (float, 8.0, lambda v: v > 0),
    "tol": (float, 1e-6, lambda v: v > 0),
    "max_iters": (int, 400, lambda v: v >= 1),
    "init": (str, "balance", lambda v: v in ("balance", "uniform", "random")),
    "seed": (int, 0, None),
}
RECOVER_KEYS = {
    "L": (float, 16.0, lambda v: v > 0),
    "nx_field": (int, 2000, lambda v: v >= 4 and v % 2 == 0),
}
COMMAND_KEYS = {
    "solve": SOLVE_KEYS,
    "recover": {**SOLVE_KEYS, **RECOVER_KEYS},
    "energy": {**SOLVE_KEYS, **RECOVER_KEYS, "flat": (bool, False, None)},
    "gamma": {**SOLVE_KEYS, "Ls": (str, "8,16,32,64", None), "nx_field": RECOVER_KEYS["nx_field"]},
    "check": {**SOLVE_KEYS, "break_constraint": (bool, False, None)},
}
COMMON_KEYS = {"out": (str, ".", None), "measure": (str, None, None)}


def _parse_Ls(text: str) -> list[float]:
    try:
        Ls = [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"Ls: cannot parse {text!r}") from exc
    if not Ls or any(L <= 0 for L in Ls):
        raise ConfigError("Ls: need a comma-separated list of positive values")
    return Ls


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    """Merge defaults, the JSON file and flags; validate every value."""
    schema = {**COMMON_KEYS, **COMMAND_KEYS[command]}
    cfg = {k: v[1] for k, v in schema.items()}
    if args.config is not None:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        text = path.read_text().strip()
        if not text:
            raise ConfigError(f"config file {path} is empty")
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: {exc}") from exc
        if not isinstance(data, dict) or not data:
            raise ConfigError(f"config file {path} must hold a non-empty JSON object")
        unknown = sorted(set(data) - set(schema))
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {', '.join(unknown)}")
        cfg.update(data)
    for key in schema:
        v = getattr(args, key, None)
        if v is not None and v is not False:
            cfg[key] = v
    for key, (typ, _, ok) in schema.items():
        v = cfg[key]
        if v is None:
            continue
        if typ is bool:
            if not isinstance(v, bool):
                raise ConfigError(f"{key}: expected true/false, got {v!r}")
            continue
        try:
            v = typ(v)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key}: expected {typ.__name__}, got {v!r}") from exc
        if typ is int and isinstance(cfg[key], float) and cfg[key] != int(cfg[key]):
            raise ConfigError(f"{key}: expected an integer, got {cfg[key]!r}")
        if ok is not None and not ok(v):
            raise ConfigError(f"{key}: invalid value {v!r}")
        cfg[key] = v
    if "Ls" in cfg:
        cfg["Ls"] = _parse_Ls(cfg["Ls"])
    return cfg


def _solver_config(cfg: dict):
    from .limit_solver import SolverConfig

    try:
        return SolverConfig(
            nx=cfg["nx"], L_eff=cfg["L_eff"], k_max=cfg["kmax"], kkt_tol=cfg["tol"],
            max_iters=cfg["max_iters"], init=cfg["init"], seed=cfg["seed"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _load_or_solve(cfg: dict):
    """Table from ``--measure`` or from a fresh solve; returns (table, report or None)."""
    from .limit_solver import minimize_F_infty
    from .serialize import read_table

    if cfg["measure"]:
        try:
            return read_table(Path(cfg["measure"])), None
        except (FileNotFoundError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot load measure: {exc}") from exc
    rep = minimize_F_infty(_solver_config(cfg))
    return rep.table, rep


def _outdir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_solve(cfg: dict) -> int:
    from .limit_solver import (
        dominant_frequency,
        equipartition_residual,
        minimize_F_infty,
        support_lower_bound,
    )
    from .serialize import report_dict, write_table
    from .svg import Panel, render

    scfg = _solver_config(cfg)
    out = _outdir(cfg)
    rep = minimize_F_infty(scfg)
    eq = equipartition_residual(rep)
    try:
        k_min = support_lower_bound(rep)
    except ValueError:
        k_min = None
    write_table(rep.table, out / "minimizer.csv", extra=report_dict(rep, eq, k_min))
    t = rep.table
    kpos = t.k > 0
    panels = [
        Panel("mass per frequency", "k", "lambda_k", logy=True).add(t.k[kpos], eq.lambda_k[kpos] + eq.lambda_k[::-1][kpos]),
        Panel("dominant frequency", "x", "k*(x)", logx=True, logy=True).add(t.x, dominant_frequency(t), "argmax").add(
            t.x, 1.0 / np.sqrt(2.0 * t.x), "(2x)^-1/2"
        ),
    ]
    (out / "minimizer.svg").write_text(render(panels))
    print(f"objective {rep.objective:.12g} kkt {rep.kkt_residual:.3e} iterations {rep.iterations}")
    if not rep.converged:
        print(f"not converged: kkt residual {rep.kkt_residual:.3e} > {scfg.kkt_tol:g}", file=sys.stderr)
        return 1
    return 0


def cmd_recover(cfg: dict) -> int:
    from .recovery import build_recovery
    from .serialize import write_field

    t, _ = _load_or_solve(cfg)
    out = _outdir(cfg)
    fld = build_recovery(t, cfg["L"], nx=cfg["nx_field"])
    write_field(fld, out)
    print(json.dumps(fld.params.to_dict(), sort_keys=True))
    return 0


def cmd_energy(cfg: dict) -> int:
    from .energy import breakdown_dict, eval_F_L, flat_field
    from .recovery import build_recovery
    from .serialize import dump_json

    out = _outdir(cfg)
    L = cfg["L"]
    if cfg["flat"]:
        fld = flat_field(L, nx=cfg["nx_field"])
    else:
        t, _ = _load_or_solve(cfg)
        fld = build_recovery(t, L, nx=cfg["nx_field"])
    eb = eval_F_L(fld, L)
    d = breakdown_dict(eb)
    dump_json(d, out / "energy.json")
    print(json.dumps(d, sort_keys=True))
    return 0


def cmd_gamma(cfg: dict) -> int:
    from .energy import gamma_gap
    from .serialize import dump_json
    from .svg import Panel, log_axis_ok, render

    t, _ = _load_or_solve(cfg)
    out = _outdir(cfg)
    rep = gamma_gap(t, cfg["Ls"], nx=cfg["nx_field"])
    rep.write_csv(out / "gamma.csv")
    Ls = np.array([r.L for r in rep.rows])
    gaps = rep.gaps
    panel = Panel("gap vs L", "L", "F_L - F_inf", logx=True, logy=log_axis_ok(gaps)).add(Ls, gaps, "gap")
    (out / "gamma.svg").write_text(render([panel]))
    verdict = rep.verdict()
    dump_json(verdict, out / "gamma_verdict.json")
    print(json.dumps(verdict, sort_keys=True))
    return 0


def cmd_check(cfg: dict) -> int:
    from .checks import run_checks
    from .serialize import dump_json

    t, _ = _load_or_solve(cfg)
    out = _outdir(cfg)
    results = run_checks(t, break_constraint=cfg["break_constraint"])
    failed = [r.name for r in results if not r.passed]
    dump_json({"passed": not failed, "failed": failed, "checks": [r.to_dict() for r in results]}, out / "check.json")
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.value:.3g} (threshold {r.threshold:g}) {r.detail}")
    if failed:
        print("failed: " + ", ".join(failed), file=sys.stderr)
        return 1
    return 0


COMMANDS = {"solve": cmd_solve, "recover": cmd_recover, "energy": cmd_energy, "gamma": cmd_gamma, "check": cmd_check}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wrinkle", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON file with parameters (flags override)")
        s.add_argument("--out", help="output directory (default: .)")
        s.add_argument("--nx", type=int)
        s.add_argument("--kmax", type=float)
        s.add_argument("--L-eff", dest="L_eff", type=float)
        s.add_argument("--tol", type=float, help="KKT tolerance")
        s.add_argument("--max-iters", dest="max_iters", type=int)
        s.add_argument("--init", choices=("balance", "uniform", "random"))
        s.add_argument("--seed", type=int)
        if name != "solve":
            s.add_argument("--measure", help="CSV table from a previous solve")
        if name in ("recover", "energy"):
            s.add_argument("--L", type=float)
        if name in ("recover", "energy", "gamma"):
            s.add_argument("--nx-field", dest="nx_field", type=int)
        if name == "energy":
            s.add_argument("--flat", action="store_true", help="evaluate the flat state instead")
        if name == "gamma":
            s.add_argument("--L", dest="Ls", help="comma-separated thickness parameters")
        if name == "check":
            s.add_argument("--break-constraint", dest="break_constraint", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    if _threads is not None and not (_threads.isdigit() and int(_threads) > 0):
        print(f"wrinkle: WRINKLE_THREADS must be a positive integer, got {_threads!r}", file=sys.stderr)
        return 2
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args.command, args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"wrinkle: config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"wrinkle: numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
