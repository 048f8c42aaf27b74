"""Command line front end: ``nonholo analyze|invariants|simulate|check``.

Exit codes: 0 ok, 1 usage, 2 model error, 3 unstabilized samples,
4 simulation blowup, 5 golden check failure.
"""
from __future__ import annotations

import argparse
import json
import math
import sys as _sys
from pathlib import Path

import numpy as np

from .expr import DEFAULT_SEED, ExprError, to_text
from .geometry import Domain, frame_components, frobenius_curvature, geodesic_curvature
from .mechanics import ModelError
from .models import resolve_model

EXIT_USAGE, EXIT_MODEL, EXIT_UNSTABLE, EXIT_BLOWUP, EXIT_CHECK = 1, 2, 3, 4, 5
CERTIFIED_ZERO = "ZERO(certified)"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(_sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _round(obj):
    """Round every float to 9 significant digits, recursively."""
    if isinstance(obj, float):
        return obj if not math.isfinite(obj) else float(f"{obj:.9g}")
    if isinstance(obj, (np.floating, np.integer)):
        return _round(obj.item())
    if isinstance(obj, np.ndarray):
        return _round(obj.tolist())
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    return obj


def _emit(doc: dict, out: Path | None, filename: str):
    text = json.dumps(_round(doc), indent=2, ensure_ascii=False, allow_nan=True)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / filename).write_text(text + "\n", encoding="utf-8")
    print(text)


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise UsageError(f"--set expects name=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = float(v)
        except ValueError:
            raise UsageError(f"--set {k}: {v!r} is not a number") from None
    return out


def _floats(text, n, flag):
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError:
        raise UsageError(f"{flag} expects comma-separated numbers") from None
    if len(vals) != n:
        raise UsageError(f"{flag} needs {n} values, got {len(vals)}")
    return vals


def _config(args) -> dict:
    keys = ("command", "model", "which", "set", "stratum", "orders", "samples", "seed", "t_end", "dt",
            "state", "p0")
    return {k: getattr(args, k, None) for k in keys}


def _load(args):
    sys = resolve_model(args.model)
    ov = _overrides(args.set)
    return sys.with_params(**ov) if ov else sys


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

def _printer(sys):
    dom = Domain(dict(sys.state_box), dict(sys.params))

    def fmt(e):
        return CERTIFIED_ZERO if dom.is_zero(e) else to_text(e)

    return fmt


def _nested(f, obj):
    if isinstance(obj, (list, tuple)):
        return [_nested(f, x) for x in obj]
    return f(obj)


def cmd_analyze(args) -> int:
    sys = _load(args)
    fmt = _printer(sys)
    g, Gam, D, P = sys.metric, sys.christoffel, sys.d_frame, sys.dp_frame

    def curvature(fn, symmetric):
        out = {}
        for a in range(sys.k):
            for b in range(a if symmetric else a + 1, sys.k):
                comps = frame_components(g, P, fn(g, Gam, D, D[a], D[b]))
                out[f"X{a + 1},X{b + 1}"] = [fmt(c) for c in comps]
        return out

    F = sys.fields
    report = {
        "config": _config(args),
        "model": sys.name,
        "params": dict(sys.params),
        "frames": {
            "distribution": [[to_text(c) for c in X] for X in D],
            "complement": [[to_text(c) for c in X] for X in P],
        },
        "christoffels": {
            "chart": _nested(fmt, Gam),
            "frame": _nested(fmt, sys.connection),
        },
        "frobenius": curvature(frobenius_curvature, False),
        "geodesic": curvature(geodesic_curvature, True),
        "fhat_star": _nested(fmt, F.fhat),
        "b_field": _nested(fmt, F.b),
        "a_field": _nested(fmt, F.A),
    }
    rng = np.random.default_rng(args.seed)
    bx = sys.state_box
    spots = []
    for _ in range(args.samples):
        st = {n: float(rng.uniform(*bx[n])) for n in sys.qv_names}
        fn = sys.compiled("analyze_spot", [*(x for row in sys.bound_fields.fhat for x in row),
                                           *sys.bound_fields.b,
                                           *(x for row in sys.bound_fields.A for x in row)], sys.qv_names)
        vals = list(fn(*st.values()))
        kr, r = sys.k * sys.r, sys.r
        spots.append({
            "state": st,
            "fhat_star": np.reshape(vals[:kr], (sys.k, sys.r)).tolist() if kr else [],
            "b_field": vals[kr:kr + r],
            "a_field": np.reshape(vals[kr + r:], (r, r)).tolist() if r else [],
        })
    report["spot_values"] = spots
    _emit(report, args.out, "analyze.json")
    return 0


# ---------------------------------------------------------------------------
# invariants
# ---------------------------------------------------------------------------

def cmd_invariants(args) -> int:
    from .invariance import admissibility_check, invariant_variety_search, sample_states
    from .mechanics import kernel_annihilator_generators

    if args.which not in ("reg", "sing"):
        raise UsageError("invariants needs --which reg or --which sing")
    sys = _load(args)
    if sys.r == 0:
        raise UsageError("model has no constraint complement; nothing to search")
    gens = kernel_annihilator_generators(sys)
    try:
        X = sample_states(sys, args.samples, args.stratum or (), seed=args.seed)
    except (ValueError, ExprError) as exc:
        raise UsageError(f"bad --stratum: {exc}") from None
    var = invariant_variety_search(sys, gens, args.which, n_max=args.orders, samples=X, seed=args.seed)
    adm = admissibility_check(sys, var, gens)
    summary = var.strata()
    samples = [{
        "state": dict(zip(sys.qv_names, s.state.tolist())),
        "status": "empty" if s.solution.empty else "nonempty",
        "dim": s.solution.dim,
        "order": s.order,
        "label": s.label,
        "certificate": None if math.isnan(s.certificate) else s.certificate,
        "p_star": None if s.solution.empty else s.solution.p_star.tolist(),
        "directions": None if s.solution.empty else s.solution.basis.T.tolist(),
    } for s in var.samples]
    report = {
        "config": _config(args),
        "model": sys.name,
        "params": dict(sys.params),
        "stratum": list(args.stratum or []),
        "engine": var.engine,
        "all_stabilized": var.all_stabilized,
        "strata": summary,
        "admissibility": {"checked": len(adm), "passed": sum(r["passed"] for r in adm),
                          "max_a_residual": max((r["a_residual"] for r in adm), default=0.0),
                          "max_b_residual": max((r["b_residual"] for r in adm), default=0.0)},
        "samples": samples,
    }
    _emit(report, args.out, "invariants.json")
    return 0 if var.all_stabilized else EXIT_UNSTABLE


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    from .odesim import attach_residuals, compare_nh_rcv, integrate, residual_kernel, write_csv

    sys = _load(args)
    if args.state is None:
        raise UsageError("simulate needs --state with " + ",".join(sys.qv_names))
    qv0 = _floats(args.state, len(sys.qv_names), "--state")
    p0 = _floats(args.p0, sys.r, "--p0") if args.p0 else [0.0] * sys.r
    if args.t_end <= 0 or args.dt <= 0:
        raise UsageError("--t-end and --dt must be positive")
    gap, nh, rcv = compare_nh_rcv(sys, qv0, p0, args.t_end, args.dt)
    trajs = {"nh": nh, "rcv": rcv}
    if args.with_sing:
        trajs["sing"] = integrate(sys, "sing", np.r_[qv0, p0], args.t_end, args.dt)
    blowup = any(t.blowup for t in trajs.values())
    files = {}
    for name, t in trajs.items():
        attach_residuals(sys, t)
        if args.out is not None:
            args.out.mkdir(parents=True, exist_ok=True)
            files[name] = str(write_csv(sys, t, args.out / f"{name}.csv"))
    e = nh.residuals["energy"]
    report = {
        "config": _config(args),
        "model": sys.name,
        "params": dict(sys.params),
        "gap_nh_rcv": gap,
        "blowup": blowup,
        "steps": {k: len(t.t) for k, t in trajs.items()},
        "nh_energy_drift": float(np.max(np.abs(e - e[0]))) if len(e) else 0.0,
        "rcv_kernel_residual": residual_kernel(sys, rcv) if sys.r else 0.0,
        "files": files,
    }
    _emit(report, args.out, "simulate.json")
    return EXIT_BLOWUP if blowup else 0


# ---------------------------------------------------------------------------
# check
# ---------------------------------------------------------------------------

def cmd_check(args) -> int:
    from .goldens import run_goldens
    from .models import rolling_disc

    base = rolling_disc()
    for m in args.mutate or ():
        base = base.with_mutation(m)
    results = run_goldens(args.seed, base)
    failures = [r.name for r in results if not r.passed]
    report = {
        "config": _config(args),
        "passed": not failures,
        "failures": failures,
        "results": [{"name": r.name, "passed": r.passed, "max_error": r.max_error, "tol": r.tol,
                     "note": r.note} for r in results],
    }
    _emit(report, args.out, "check.json")
    if failures:
        print("golden failures: " + ", ".join(failures), file=_sys.stderr)
        return EXIT_CHECK
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nonholo", description="Nonholonomic versus constrained variational dynamics.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, model=True):
        if model:
            sp.add_argument("--model", default="disc", help="builtin name (disc, flat_holonomic) or model file")
            sp.add_argument("--set", action="append", metavar="NAME=VALUE", help="override a parameter")
        sp.add_argument("--seed", type=int, default=DEFAULT_SEED)
        sp.add_argument("--out", type=Path, help="directory for report files")

    a = sub.add_parser("analyze", help="geometric data of the model")
    common(a)
    a.add_argument("--samples", type=int, default=3, help="number of spot states")

    i = sub.add_parser("invariants", help="invariant affine fibers inside the kernel")
    common(i)
    i.add_argument("--which", default="reg", choices=("reg", "sing"))
    i.add_argument("--stratum", action="append", metavar="EXPR", help="predicate lhs=rhs; repeat to intersect")
    i.add_argument("--orders", type=int, default=8, help="largest Lie derivative order")
    i.add_argument("--samples", type=int, default=16)

    s = sub.add_parser("simulate", help="integrate NH and RCV from one state and compare")
    common(s)
    s.add_argument("--state", help="comma-separated initial coordinates and velocities")
    s.add_argument("--p0", help="comma-separated initial adjoint components (default 0)")
    s.add_argument("--t-end", type=float, default=5.0)
    s.add_argument("--dt", type=float, default=1e-3)
    s.add_argument("--with-sing", action="store_true", help="also integrate the singular system")

    c = sub.add_parser("check", help="compare the disc fixture against its closed forms")
    common(c, model=False)
    c.add_argument("--mutate", action="append", help=argparse.SUPPRESS)
    return p


COMMANDS = {"analyze": cmd_analyze, "invariants": cmd_invariants, "simulate": cmd_simulate, "check": cmd_check}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return int(exc.code or 0)
    for name in ("samples", "orders"):
        if getattr(args, name, 1) is not None and getattr(args, name, 1) < 1:
            print(f"nonholo: --{name} must be >= 1", file=_sys.stderr)
            return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"nonholo: {exc}", file=_sys.stderr)
        return EXIT_USAGE
    except (ModelError, ExprError) as exc:
        print(f"nonholo: model error: {exc}", file=_sys.stderr)
        return EXIT_MODEL


if __name__ == "__main__":
    raise SystemExit(main())
