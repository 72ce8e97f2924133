"""``escna`` command line.

Subcommands: simulate, average, compare, fit, sweep, verify-limits, boundary.

Exit status is 0 on success, 2 on a usage error (bad or missing flags,
unknown builtin, unreadable or invalid config) and 1 when the computation
itself fails.  Every invocation writes a JSON run manifest: to ``--manifest``
when given, else next to ``--out`` as ``<out>.manifest.json``, else to
``./escna-manifest.json``.

``--controller`` and ``--spec`` read JSON files of flag values; a flag given
on the command line wins over the file and a warning is printed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import defaults
from .avgverify import verify_uniform_limits, verify_weak_limits
from .esc import (
    averaged_system_conjecture,
    averaged_system_theorem1,
    epsilon_bound,
    equilibrium_boundary_uu,
    synthesize_controller,
)
from .exprlang import ExprError, parse_expr
from .integrate import Trajectory, compare, integrate_average, integrate_closed_loop
from .model import BUILTINS, ConfigError, builtin, load_system, load_system_file
from .oddpoly import fit_odd_polynomial
from .sweep import SweepSpec, run_sweep

MANIFEST_FALLBACK = "escna-manifest.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _axis(text: str) -> dict:
    parts = text.split(":")
    if len(parts) not in (4, 5):
        raise argparse.ArgumentTypeError("axis must look like name:min:max:count[:log]")
    try:
        out = {"name": parts[0], "min": float(parts[1]), "max": float(parts[2]), "count": int(parts[3])}
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad axis {text!r}") from None
    if len(parts) == 5:
        out["scale"] = parts[4]
    return out


# ---------------------------------------------------------------------------
# Parser


def _add_system(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--builtin", help=f"named system ({', '.join(BUILTINS)})")
    g.add_argument("--config", help="system JSON file")
    p.add_argument("--eps", type=float, help="even-channel strength for builtins")
    p.add_argument("--a1", type=float, help="example1_approx coefficient of u")
    p.add_argument("--a3", type=float, help="example1_approx coefficient of u^3")


def _add_controller(p, with_file=True):
    p.add_argument("--m", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--omega", type=float)
    p.add_argument("--k", type=float)
    p.add_argument("--V", help="V(x, t) expression, e.g. 'x1^2'")
    p.add_argument("--output-feedback", action="store_true", default=None, help="use the system output instead of V")
    if with_file:
        p.add_argument("--controller", help="controller JSON file (m, alpha, omega, k, V)")


def _add_common(p, out_help="output file"):
    p.add_argument("--out", help=out_help)
    p.add_argument("--manifest", help="run manifest path")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="escna", description="Extremum seeking for systems non-affine in control.", allow_abbrev=False
    )
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("simulate", allow_abbrev=False, help="integrate the dithered closed loop")
    _add_system(p)
    _add_controller(p)
    p.add_argument("--x0", type=_float_list)
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--T", type=float)
    p.add_argument("--steps-per-period", type=int)
    _add_common(p, "trajectory CSV (t,x1..xn,u)")

    p = sub.add_parser("average", allow_abbrev=False, help="integrate an averaged system")
    _add_system(p)
    _add_controller(p)
    p.add_argument("--method", choices=("theorem1", "conjecture"), default="theorem1")
    p.add_argument("--x0", type=_float_list)
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--T", type=float)
    p.add_argument("--dt", type=float, help=f"step size (default T/{defaults.AVERAGE_STEPS})")
    _add_common(p, "trajectory CSV (t,x1..xn)")

    p = sub.add_parser("compare", allow_abbrev=False, help="sup-norm gap between two trajectory CSVs")
    p.add_argument("first")
    p.add_argument("second")
    _add_common(p, "report JSON")

    p = sub.add_parser("fit", allow_abbrev=False, help="least-squares odd-polynomial fit of an input nonlinearity")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--builtin", help="take h from this builtin (example1 or nonlfinal)")
    g.add_argument("--h", help="h(u) expression")
    p.add_argument("--m", type=int)
    p.add_argument("--U", type=float, help="fit on [-U, U]")
    p.add_argument("--samples", type=int, default=defaults.FIT_SAMPLES)
    _add_common(p, "fit JSON")

    p = sub.add_parser("sweep", allow_abbrev=False, help="stability-region grid")
    p.add_argument("--spec", help="sweep JSON file")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--builtin")
    g.add_argument("--config", help="system JSON file (no analytic boundary is attached)")
    p.add_argument("--axis", type=_axis, action="append", help="name:min:max:count[:log]; give once or twice")
    p.add_argument("--eps", type=float)
    _add_controller(p, with_file=False)
    p.add_argument("--x0", type=_float_list)
    p.add_argument("--T", type=float)
    p.add_argument("--steps-per-period", type=int)
    p.add_argument("--theta-conv", type=float)
    p.add_argument("--cutoff", type=float)
    p.add_argument("--x-star", type=float)
    p.add_argument("--margin", type=float, default=defaults.AGREEMENT_MARGIN)
    p.add_argument("--jobs", type=int, default=defaults.JOBS)
    p.add_argument("--boundary-out", help="boundary CSV")
    p.add_argument("--summary-out", help="summary JSON")
    _add_common(p, "grid CSV (axis1,axis2,terminal_abs_x,label)")

    p = sub.add_parser("verify-limits", allow_abbrev=False, help="numerical uniform and weak limit checks")
    p.add_argument("--m", type=int)
    p.add_argument("--l", type=int, help="top-channel index for the weak limits (default: all)")
    p.add_argument("--omegas", type=_float_list)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--nodes-per-period", type=int, default=defaults.NODES_PER_PERIOD)
    _add_common(p, "report JSON")

    p = sub.add_parser("boundary", allow_abbrev=False, help="analytic stability boundaries of uu and evenpow")
    p.add_argument("--system", choices=("uu", "evenpow"))
    p.add_argument("--m", type=int)
    p.add_argument("--k", type=float)
    p.add_argument("--eps", type=float, default=0.0)
    p.add_argument("--alpha", type=float)
    p.add_argument("--omega", type=_float_list)
    p.add_argument("--x-star", type=float, default=defaults.THETA_CONV)
    _add_common(p, "boundary CSV")
    return parser


# ---------------------------------------------------------------------------
# Helpers


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise UsageError(f"missing required flag(s): {flags}")


def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise UsageError(f"{path}: expected a JSON object")
    return data


def _merge_file(args, data: dict, source: str, allowed) -> None:
    """Fill flag values from a JSON file; explicit flags win."""
    for key, value in data.items():
        attr = key.replace("-", "_")
        if attr not in allowed:
            raise UsageError(f"{source}: unknown key {key!r}")
        if getattr(args, attr, None) is not None:
            print(f"warning: --{attr.replace('_', '-')} overrides {key!r} from {source}", file=sys.stderr)
            continue
        setattr(args, attr, value)


def _system(args, ctx):
    if args.config:
        ctx.inputs.append(args.config)
        if args.eps is not None or args.a1 is not None or args.a3 is not None:
            raise UsageError("--eps/--a1/--a3 apply to builtins only")
        try:
            return load_system_file(args.config)
        except OSError as exc:
            raise UsageError(f"cannot read {args.config}: {exc.strerror}") from None
        except (ConfigError, ExprError, json.JSONDecodeError) as exc:
            raise UsageError(f"{args.config}: {exc}") from None
    if not args.builtin:
        raise UsageError("give --builtin or --config")
    if args.builtin not in BUILTINS:
        raise UsageError(f"unknown builtin {args.builtin!r} (choose from {', '.join(BUILTINS)})")
    params = {}
    if args.a1 is not None or args.a3 is not None:
        if args.builtin != "example1_approx":
            raise UsageError("--a1/--a3 apply to example1_approx only")
        params = {k: getattr(args, k) for k in ("a1", "a3") if getattr(args, k) is not None}
    return builtin(args.builtin, eps=args.eps or 0.0, **params)


_CONTROLLER_KEYS = ("m", "alpha", "omega", "k", "V", "output_feedback")


def _controller(args, ctx):
    if getattr(args, "controller", None):
        ctx.inputs.append(args.controller)
        _merge_file(args, _read_json(args.controller), args.controller, _CONTROLLER_KEYS)
    _require(args, "m", "alpha", "omega", "k")
    feedback = bool(args.output_feedback)
    if not feedback and args.V is None:
        raise UsageError("missing required flag: --V (or --output-feedback)")
    try:
        return synthesize_controller(args.m, args.alpha, args.omega, args.k, None if feedback else args.V, feedback)
    except (ValueError, ExprError) as exc:
        raise UsageError(str(exc)) from None


def _x0(args, dim):
    _require(args, "x0")
    if len(args.x0) != dim:
        raise UsageError(f"--x0 has {len(args.x0)} values, system dimension is {dim}")
    return np.array(args.x0)


def _write_text(ctx, path, text):
    Path(path).write_text(text, encoding="utf-8")
    ctx.outputs.append(str(path))


def _write_json(ctx, path, obj):
    _write_text(ctx, path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _clean(obj):
    """JSON-safe copy: non-finite floats become strings."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


class _Context:
    def __init__(self):
        self.inputs: list[str] = []
        self.outputs: list[str] = []
        self.results: dict = {}


# ---------------------------------------------------------------------------
# Subcommands. Each resolves its arguments first (UsageError -> exit 2) and
# returns a thunk doing the work (any failure -> exit 1).


def _cmd_simulate(args, ctx):
    system = _system(args, ctx)
    c = _controller(args, ctx)
    x0 = _x0(args, system.dim)
    _require(args, "T")
    S = args.steps_per_period or defaults.STEPS_PER_PERIOD

    def run():
        traj = integrate_closed_loop(system, c, x0, t0=args.t0, T=args.T, steps_per_period=S)
        ctx.results.update(
            final_state=traj.final_state.tolist(), blowup=traj.blowup, blowup_reason=traj.blowup_reason
        )
        if args.out:
            traj.to_csv(args.out)
            ctx.outputs.append(args.out)
        else:
            print(json.dumps(_clean(ctx.results)))

    return run


def _cmd_average(args, ctx):
    system = _system(args, ctx)
    c = _controller(args, ctx)
    x0 = _x0(args, system.dim)
    _require(args, "T")

    def run():
        build = averaged_system_theorem1 if args.method == "theorem1" else averaged_system_conjecture
        avg = build(system, c)
        traj = integrate_average(avg, x0, t0=args.t0, T=args.T, dt=args.dt, cutoff=system.blowup_cutoff)
        ctx.results.update(
            field=[str(e) for e in avg.field],
            constants=avg.constants,
            final_state=traj.final_state.tolist(),
            blowup=traj.blowup,
        )
        if args.out:
            traj.to_csv(args.out)
            ctx.outputs.append(args.out)
        else:
            print(json.dumps(_clean(ctx.results)))

    return run


def _load_traj(path, ctx):
    ctx.inputs.append(path)
    try:
        return Trajectory.from_csv(path)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _cmd_compare(args, ctx):
    a = _load_traj(args.first, ctx)
    b = _load_traj(args.second, ctx)

    def run():
        report = compare(a, b).to_dict()
        ctx.results.update(report)
        if args.out:
            _write_json(ctx, args.out, report)
        else:
            print(json.dumps(report, sort_keys=True))

    return run


def _cmd_fit(args, ctx):
    _require(args, "m", "U")
    if args.h is not None:
        try:
            h = parse_expr(args.h, ["u"])
        except ExprError as exc:
            raise UsageError(f"--h: {exc}") from None
    elif args.builtin is not None:
        if args.builtin not in BUILTINS:
            raise UsageError(f"unknown builtin {args.builtin!r} (choose from {', '.join(BUILTINS)})")
        system = builtin(args.builtin)
        if system.nonlinearity is None:
            raise UsageError(f"builtin {args.builtin!r} has no input nonlinearity to fit")
        h = system.nonlinearity[1]
    else:
        raise UsageError("give --h or --builtin")

    def run():
        poly = fit_odd_polynomial(h, args.m, args.U, args.samples)
        report = {
            "coefficients": list(poly.coeffs),
            "powers": [2 * n + 1 for n in range(len(poly.coeffs))],
            "sup_error": poly.sup_error,
            "m": args.m,
            "U": args.U,
        }
        ctx.results.update(report)
        if args.out:
            _write_json(ctx, args.out, report)
        else:
            print(json.dumps(report, sort_keys=True))

    return run


_SWEEP_KEYS = (
    "builtin", "config", "axis", "eps", "m", "alpha", "omega", "k", "V", "x0", "T", "steps_per_period",
    "theta_conv", "cutoff", "x_star", "margin", "jobs",
)


def _cmd_sweep(args, ctx):
    if args.spec:
        ctx.inputs.append(args.spec)
        data = _read_json(args.spec)
        if "system" in data:
            data["builtin"] = data.pop("system")
        if "axes" in data:
            data["axis"] = data.pop("axes")
        _merge_file(args, data, args.spec, _SWEEP_KEYS)
    _require(args, "axis", "m", "k")
    config = None
    if args.config is not None:
        if args.builtin is not None:
            raise UsageError("give --builtin or --config, not both")
        ctx.inputs.append(args.config)
        try:
            config = Path(args.config).read_text(encoding="utf-8")
            name = load_system(config).name
        except OSError as exc:
            raise UsageError(f"cannot read {args.config}: {exc.strerror}") from None
        except (ConfigError, ExprError) as exc:
            raise UsageError(f"{args.config}: {exc}") from None
    elif args.builtin is None:
        raise UsageError("give --builtin or --config")
    elif args.builtin not in BUILTINS:
        raise UsageError(f"unknown builtin {args.builtin!r} (choose from {', '.join(BUILTINS)})")
    else:
        name = args.builtin
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    fixed = {}
    for key in ("alpha", "omega", "eps", "V", "T", "steps_per_period", "theta_conv", "cutoff", "x_star"):
        if getattr(args, key) is not None:
            fixed[key] = getattr(args, key)
    if args.x0 is not None:
        x0 = args.x0 if isinstance(args.x0, list) else [args.x0]
        fixed["x0"] = x0[0] if len(x0) == 1 else tuple(x0)
    try:
        spec = SweepSpec(name, tuple(args.axis), m=args.m, k=args.k, config=config, **fixed)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None

    def run():
        grid = run_sweep(spec, jobs=args.jobs)
        summary = grid.summary(margin=args.margin)
        ctx.results.update(counts=summary["counts"], agreement=summary.get("agreement"))
        if args.out:
            _write_text(ctx, args.out, grid.to_csv())
        else:
            sys.stdout.write(grid.to_csv())
        if args.boundary_out:
            if grid.boundary is None:
                raise ValueError("this sweep has no analytic boundary")
            _write_text(ctx, args.boundary_out, grid.boundary_csv())
        if args.summary_out:
            _write_json(ctx, args.summary_out, _clean(summary))

    return run


def _cmd_verify(args, ctx):
    _require(args, "m", "omegas")
    if args.m < 0:
        raise UsageError("--m must be nonnegative")
    if args.l is not None and not 0 <= args.l <= args.m:
        raise UsageError(f"--l must lie in [0, {args.m}]")
    if args.nodes_per_period < defaults.MIN_NODES_PER_PERIOD:
        raise UsageError(
            f"--nodes-per-period below the aliasing guard ({defaults.MIN_NODES_PER_PERIOD})"
        )

    def run():
        ls = [args.l] if args.l is not None else list(range(args.m + 1))
        uniform = verify_uniform_limits(args.m, args.omegas, args.alpha, nodes_per_period=args.nodes_per_period)
        weak = [
            verify_weak_limits(args.m, l, args.omegas, args.alpha, nodes_per_period=args.nodes_per_period)
            for l in ls
        ]
        report = {
            "passed": uniform.passed and all(w.passed for w in weak),
            "uniform": uniform.to_dict(),
            "weak": [w.to_dict() for w in weak],
        }
        ctx.results["passed"] = report["passed"]
        if args.out:
            _write_json(ctx, args.out, _clean(report))
        else:
            print(json.dumps(_clean(report), sort_keys=True))

    return run


def _cmd_boundary(args, ctx):
    _require(args, "system", "m", "k", "omega")
    if args.system == "evenpow":
        _require(args, "alpha")
        if args.m not in (0, 1):
            raise UsageError("the evenpow bound exists for m = 0 and m = 1 only")
        header = "omega,eps_bound"

        def value(w):
            return epsilon_bound(args.m, args.k, args.alpha, w)

    else:
        if args.m not in (0, 1, 2):
            raise UsageError("the uu boundary is defined for m = 0, 1, 2")
        header = "omega,alpha_boundary"

        def value(w):
            return equilibrium_boundary_uu(args.k, args.m, args.eps, w, args.x_star)

    def run():
        rows = [(w, value(w)) for w in args.omega]
        text = header + "\n" + "".join(f"{w:.17g},{b:.17g}\n" for w, b in rows)
        ctx.results["boundary"] = [b for _, b in rows]
        if args.out:
            _write_text(ctx, args.out, text)
        else:
            sys.stdout.write(text)

    return run


COMMANDS = {
    "simulate": _cmd_simulate,
    "average": _cmd_average,
    "compare": _cmd_compare,
    "fit": _cmd_fit,
    "sweep": _cmd_sweep,
    "verify-limits": _cmd_verify,
    "boundary": _cmd_boundary,
}


# ---------------------------------------------------------------------------
# Manifest


def _sha256(path) -> str | None:
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError:
        return None


def _scan_flag(argv, flag):
    for i, a in enumerate(argv):
        if a == flag and i + 1 < len(argv):
            return argv[i + 1]
        if a.startswith(flag + "="):
            return a.split("=", 1)[1]
    return None


def _manifest_path(argv, args) -> Path:
    explicit = getattr(args, "manifest", None) if args else _scan_flag(argv, "--manifest")
    if explicit:
        return Path(explicit)
    out = getattr(args, "out", None) if args else _scan_flag(argv, "--out")
    if out:
        return Path(str(out) + ".manifest.json")
    return Path(MANIFEST_FALLBACK)


def _params(args) -> dict:
    if args is None:
        return {}
    skip = {"command", "manifest"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    start = time.perf_counter()
    ctx = _Context()
    args = None
    error = None
    code = 0
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required")
        run = COMMANDS[args.command](args, ctx)
    except UsageError as exc:
        error, code = str(exc), 2
    else:
        try:
            run()
        except Exception as exc:  # reported in the manifest and on stderr
            error, code = f"{type(exc).__name__}: {exc}", 1
    if error is not None:
        print(f"escna: error: {error}", file=sys.stderr)
    manifest = {
        "command": args.command if args else (argv[0] if argv else None),
        "argv": argv,
        "params": _clean(_params(args)),
        "inputs": {p: _sha256(p) for p in ctx.inputs},
        "outputs": [p for p in ctx.outputs if os.path.exists(p)] if code == 0 else list(ctx.outputs),
        "results": _clean(ctx.results),
        "wall_time": time.perf_counter() - start,
        "exit_code": code,
        "error": error,
        "reserved_env": {"ESCNA_SEED": os.environ.get("ESCNA_SEED")},
    }
    path = _manifest_path(argv, args)
    try:
        path.write_text(json.dumps(manifest, sort_keys=True, indent=2, default=str) + "\n", encoding="utf-8")
    except OSError as exc:
        print(f"escna: warning: cannot write manifest {path}: {exc.strerror}", file=sys.stderr)
        if code == 0:
            code = 1
    return code


if __name__ == "__main__":
    sys.exit(main())
