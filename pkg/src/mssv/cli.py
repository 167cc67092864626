"""Command-line entry point.

Subcommands
    simulate-ou     one exact-transition OU factor path -> CSV
    simulate        one full-model joint path -> CSV (t, s, y, z)
    price-full      full-model Monte Carlo price -> JSON summary
    price-approx    first-order approximate price -> JSON summary
    calibrate       quote surface -> group-parameter JSON file
    synth-surface   group-parameter file -> affine smile CSV
    accuracy-sweep  |full - first order| across scales -> CSV + slope

Every command prints a one-line JSON summary to stdout. Floats are written
with 17 significant digits everywhere, so identical invocations with the
same seed produce byte-identical files. Output files are written atomically
(temp file + rename): a failing run leaves nothing behind. Exit codes:
0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import io
import json
import os
import sys
import tempfile

import numpy as np

from mssv.analytic import OracleState, VanillaSpec
from mssv.calibration import (
    coeffs_to_params,
    fit_smile,
    params_to_coeffs,
    smile_residuals,
    surface_from_csv,
    surface_to_csv,
    synthesize_surface,
)
from mssv.mc import GridSpec, McConfig, simulate_full, simulate_ou
from mssv.model import GroupParams, ModelSpec, group_params
from mssv.pathspace import Path
from mssv.pricing import (
    ControlVariate,
    GeoAsianOracle,
    QvLinearOracle,
    VanillaOracle,
    accuracy_sweep,
    first_order_price,
    full_model_price,
)

PAYOFFS = ("vanilla-call", "vanilla-put", "asian-call", "asian-put", "qv")


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _json(value) -> str:
    """Serialize with fixed 17-significant-digit floats.

    The stdlib encoder always uses shortest round-trip repr for floats, so
    this walks the structure itself (plain dicts, sequences, scalars only).
    """
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "null"
    if isinstance(value, (float, np.floating)):
        return _fmt(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, dict):
        items = (f"{json.dumps(str(k))}: {_json(v)}" for k, v in value.items())
        return "{" + ", ".join(items) + "}"
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_json(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {type(value).__name__}")


def _emit(summary: dict) -> None:
    print(_json(summary))


def _write_atomic(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".mssv-", text=True)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _load_params(path: str) -> tuple:
    """Group-parameter JSON file -> (GroupParams, rate or None)."""
    with open(path) as fh:
        d = json.load(fh)
    return GroupParams.from_dict(d), d.get("r")


def _resolve_rate(args, file_rate) -> float:
    if args.rate is not None:
        return args.rate
    if file_rate is not None:
        return float(file_rate)
    return 0.0


def _oracle_for(payoff: str, strike, maturity: float, r: float):
    if payoff == "qv":
        return QvLinearOracle(maturity, r)
    if strike is None:
        raise ValueError(f"payoff {payoff!r} needs --strike")
    kind = "put" if payoff.endswith("put") else "call"
    vspec = VanillaSpec(strike=strike, maturity=maturity, kind=kind)
    if payoff.startswith("asian"):
        return GeoAsianOracle(vspec, r)
    return VanillaOracle(vspec, r)


def _parse_linspace(text: str, name: str) -> np.ndarray:
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError(f"{name} must look like lo:hi:count, got {text!r}")
    lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
    if count < 1:
        raise ValueError(f"{name} needs a positive count")
    return np.linspace(lo, hi, count)


def _parse_scales(text: str) -> list:
    scales = []
    for item in text.split(","):
        if ":" in item:
            e, d = item.split(":")
            scales.append((float(e), float(d)))
        else:
            scales.append((float(item), float(item)))
    return scales


# --- commands -------------------------------------------------------------------


def cmd_simulate_ou(args) -> int:
    grid = GridSpec(0.0, args.T, args.steps)
    path = simulate_ou(args.kappa, args.m, args.nu, args.y0, grid, args.seed)
    buf = io.StringIO()
    buf.write("time,value\n")
    for t, v in zip(path.times(), path.values):
        buf.write(f"{_fmt(t)},{_fmt(v)}\n")
    _write_atomic(args.out, buf.getvalue())
    _emit({
        "command": "simulate-ou",
        "out": args.out,
        "rows": len(path.values),
        "terminal": float(path.last),
        "seed": args.seed,
    })
    return 0


def cmd_simulate(args) -> int:
    spec = ModelSpec.from_json(args.model)
    grid = GridSpec(args.t0, args.T, args.steps)
    y0 = spec.m_y if args.y0 is None else args.y0
    z0 = spec.m_z if args.z0 is None else args.z0
    s, y, z = simulate_full(spec, args.s0, y0, z0, grid, args.seed)
    buf = io.StringIO()
    buf.write("t,s,y,z\n")
    for t, sv, yv, zv in zip(s.times(), s.values, y.values, z.values):
        buf.write(f"{_fmt(t)},{_fmt(sv)},{_fmt(yv)},{_fmt(zv)}\n")
    _write_atomic(args.out, buf.getvalue())
    _emit({
        "command": "simulate",
        "out": args.out,
        "rows": len(s.values),
        "terminal": {"s": s.last, "y": y.last, "z": z.last},
        "seed": args.seed,
    })
    return 0


def cmd_price_full(args) -> int:
    spec = ModelSpec.from_json(args.model)
    oracle = _oracle_for(args.payoff, args.strike, args.maturity, spec.r)
    grid = GridSpec(args.t0, args.maturity, args.steps)
    X = Path(args.t0, 1.0, np.array([args.s0]))
    mc = McConfig(n_paths=args.paths, seed=args.seed, workers=args.workers,
                  antithetic=args.antithetic)
    z0 = spec.m_z if args.z0 is None else args.z0
    control = None
    if args.control:
        gp = group_params(spec, z0)
        control = ControlVariate(oracle, gp.sigma_star)
    est = full_model_price(spec, oracle.payoff_functional(), X, grid, mc,
                           y0=args.y0, z0=z0, control=control)
    summary = {
        "command": "price-full",
        "payoff": args.payoff,
        "estimate": est.to_dict(),
        "paths": args.paths,
        "steps": args.steps,
        "control": bool(args.control),
    }
    if args.out:
        _write_atomic(args.out, _json(summary) + "\n")
        summary["out"] = args.out
    _emit(summary)
    return 0


def cmd_price_approx(args) -> int:
    gp, file_rate = _load_params(args.params)
    r = _resolve_rate(args, file_rate)
    oracle = _oracle_for(args.payoff, args.strike, args.maturity, r)
    state = OracleState(t=args.t, x=args.x, log_integral=args.log_integral,
                        qv=args.qv)
    grid = None
    mc = None
    if args.method in ("feynman_kac", "quadrature"):
        grid = GridSpec(args.t, args.maturity, args.steps)
    if args.method == "feynman_kac":
        mc = McConfig(n_paths=args.paths, seed=args.seed, workers=args.workers)
    rep = first_order_price(oracle, gp, state, grid=grid, mc=mc,
                            method=args.method, reduced=not args.unreduced)
    summary = {
        "command": "price-approx",
        "payoff": args.payoff,
        "method": args.method,
        "reduced": not args.unreduced,
        "rate": r,
        "report": rep.to_dict(),
    }
    if args.out:
        _write_atomic(args.out, _json(summary) + "\n")
        summary["out"] = args.out
    _emit(summary)
    return 0


def cmd_calibrate(args) -> int:
    surface = surface_from_csv(args.quotes, x=args.spot, r=args.rate, t=args.time)
    coeffs = fit_smile(surface, vega_weighted=args.vega_weighted)
    gp = coeffs_to_params(coeffs, args.rate, literal=args.literal)
    res = smile_residuals(surface, coeffs)
    rms = float(np.sqrt(np.mean(res * res)))
    payload = dict(gp.to_dict())
    payload["r"] = args.rate
    _write_atomic(args.out, _json(payload) + "\n")
    _emit({
        "command": "calibrate",
        "out": args.out,
        "coeffs": coeffs.to_dict(),
        "params": payload,
        "residual_rms": rms,
        "quotes": len(surface.quotes),
    })
    return 0


def cmd_synth_surface(args) -> int:
    gp, file_rate = _load_params(args.params)
    r = _resolve_rate(args, file_rate)
    try:
        k_part, t_part = args.grid.split("x")
    except ValueError:
        raise ValueError(
            f"--grid must look like KLO:KHI:NKxTLO:THI:NT, got {args.grid!r}"
        ) from None
    strikes = _parse_linspace(k_part, "--grid strikes")
    maturities = _parse_linspace(t_part, "--grid maturities")
    surface = synthesize_surface(gp, r, strikes, maturities, x=args.spot,
                                 t=args.time)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(args.out)) or ".",
                               prefix=".mssv-")
    os.close(fd)
    try:
        surface_to_csv(surface, tmp)
        os.replace(tmp, args.out)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise
    _emit({
        "command": "synth-surface",
        "out": args.out,
        "quotes": len(surface.quotes),
        "coeffs": params_to_coeffs(gp, r).to_dict(),
    })
    return 0


def cmd_accuracy_sweep(args) -> int:
    spec = ModelSpec.from_json(args.model)
    oracle = _oracle_for(args.payoff, args.strike, args.maturity, spec.r)
    scales = _parse_scales(args.scales)
    grid = GridSpec(args.t0, args.maturity, args.steps)
    X = Path(args.t0, 1.0, np.array([args.s0]))
    mc = McConfig(n_paths=args.paths, seed=args.seed, workers=args.workers)
    res = accuracy_sweep(spec, oracle, oracle.payoff_functional(), scales, mc,
                         X=X, grid=grid, y0=args.y0, z0=args.z0,
                         use_control=not args.no_control)
    buf = io.StringIO()
    buf.write("eps,delta,error,stderr\n")
    for p in res.points:
        buf.write(f"{_fmt(p.eps)},{_fmt(p.delta)},{_fmt(p.error)},{_fmt(p.stderr)}\n")
    _write_atomic(args.out, buf.getvalue())
    _emit({
        "command": "accuracy-sweep",
        "out": args.out,
        "slope": res.slope,
        "points": len(res.points),
        "used": sum(1 for p in res.points if p.used),
    })
    return 0


# --- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mssv",
        description="Multiscale stochastic volatility pricing toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workers", type=int, default=None,
                        help="thread count for Monte Carlo (never changes numerics)")
    common.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("simulate-ou", parents=[common],
                       help="one mean-reverting factor path to CSV")
    p.add_argument("--kappa", type=float, required=True)
    p.add_argument("--m", type=float, required=True)
    p.add_argument("--nu", type=float, required=True)
    p.add_argument("--y0", type=float, required=True)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--out", default="ou_path.csv")
    p.set_defaults(func=cmd_simulate_ou)

    p = sub.add_parser("simulate", parents=[common],
                       help="one full-model joint path to CSV")
    p.add_argument("--model", required=True, help="model JSON file")
    p.add_argument("--s0", type=float, default=1.0)
    p.add_argument("--y0", type=float, default=None)
    p.add_argument("--z0", type=float, default=None)
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--out", default="model_path.csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("price-full", parents=[common],
                       help="full-model Monte Carlo price")
    p.add_argument("--model", required=True)
    p.add_argument("--payoff", choices=PAYOFFS, required=True)
    p.add_argument("--strike", type=float, default=None)
    p.add_argument("--maturity", type=float, required=True)
    p.add_argument("--s0", type=float, default=1.0)
    p.add_argument("--y0", type=float, default=None)
    p.add_argument("--z0", type=float, default=None)
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--paths", type=int, default=100_000)
    p.add_argument("--antithetic", action="store_true")
    p.add_argument("--control", action="store_true",
                   help="subtract a constant-vol control variate")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_price_full)

    p = sub.add_parser("price-approx", parents=[common],
                       help="first-order approximate price")
    p.add_argument("--params", required=True, help="group-parameter JSON file")
    p.add_argument("--payoff", choices=PAYOFFS, required=True)
    p.add_argument("--strike", type=float, default=None)
    p.add_argument("--maturity", type=float, default=1.0)
    p.add_argument("--x", type=float, default=100.0, help="current level")
    p.add_argument("--t", type=float, default=0.0, help="valuation time")
    p.add_argument("--log-integral", type=float, default=0.0,
                   help="running integral of the log level (average payoffs)")
    p.add_argument("--qv", type=float, default=0.0,
                   help="accumulated quadratic variation")
    p.add_argument("--rate", type=float, default=None,
                   help="defaults to the r recorded in the params file")
    p.add_argument("--method", choices=("closed", "feynman_kac", "quadrature"),
                   default="closed")
    p.add_argument("--steps", type=int, default=256)
    p.add_argument("--paths", type=int, default=100_000)
    p.add_argument("--unreduced", action="store_true",
                   help="keep the base vol and the v2 term instead of the "
                        "corrected level")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_price_approx)

    p = sub.add_parser("calibrate", parents=[common],
                       help="fit a quote surface to group parameters")
    p.add_argument("--quotes", required=True, help="CSV with columns K,T,iv")
    p.add_argument("--spot", type=float, required=True)
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--time", type=float, default=0.0)
    p.add_argument("--vega-weighted", action="store_true")
    p.add_argument("--literal", action="store_true",
                   help="invert with the uncorrected level (one order cruder)")
    p.add_argument("--out", default="params.json")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("synth-surface", parents=[common],
                       help="synthesize an affine smile surface CSV")
    p.add_argument("--params", required=True)
    p.add_argument("--grid", required=True,
                   help="strike and maturity grid, KLO:KHI:NKxTLO:THI:NT")
    p.add_argument("--spot", type=float, default=100.0)
    p.add_argument("--rate", type=float, default=None)
    p.add_argument("--time", type=float, default=0.0)
    p.add_argument("--out", default="surface.csv")
    p.set_defaults(func=cmd_synth_surface)

    p = sub.add_parser("accuracy-sweep", parents=[common],
                       help="approximation error across time-scale separations")
    p.add_argument("--model", required=True)
    p.add_argument("--payoff", choices=PAYOFFS, required=True)
    p.add_argument("--strike", type=float, default=None)
    p.add_argument("--maturity", type=float, required=True)
    p.add_argument("--scales", required=True,
                   help="comma list; each item is eps or eps:delta")
    p.add_argument("--s0", type=float, default=1.0)
    p.add_argument("--y0", type=float, default=None)
    p.add_argument("--z0", type=float, default=None)
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--paths", type=int, default=100_000)
    p.add_argument("--no-control", action="store_true")
    p.add_argument("--out", default="sweep.csv")
    p.set_defaults(func=cmd_accuracy_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
