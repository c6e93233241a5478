"""``fracsign`` command line interface.

Exit codes: 0 when every verdict passes, 2 when a verdict fails, 1 on usage,
spec or numerical errors.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path
from typing import Any, Callable, Sequence

import jsonschema
import numpy as np

from fracsign import __version__
from fracsign.expr import ExprError, parse
from fracsign.frac_ops import GridFunction, UniformGrid
from fracsign.herglotz import (
    EL_TOL,
    HerglotzProblem,
    PartialsMismatchError,
    candidate_from_control,
    direct_minimize,
    validate_partials,
    verify,
)
from fracsign.linear_solvers import (
    LeftCaputoIVP,
    RightRLIVP,
    SeriesNotConvergedError,
    SolverError,
    predictor_corrector,
    solve_implicit_trapezoid,
    solve_resolvent,
    solve_right_series,
    solve_vcf,
)
from fracsign.sign_analysis import (
    PreconditionError,
    bernoulli_sweep,
    check_negative,
    check_positive,
    check_separation,
    sweep_range,
)
from fracsign.special_fn import mittag_leffler

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FAILED = 2

DEFAULT_N = 2048

# {{{ spec schema

_NUMBER = {"type": "number"}
_EXPR_OR_NUMBER = {"type": ["number", "string"]}
_INTERVAL = {
    "type": "object",
    "properties": {"a": _NUMBER, "b": _NUMBER},
    "required": ["a", "b"],
    "additionalProperties": False,
}
_ALPHA = {"type": "number", "exclusiveMinimum": 0, "maximum": 1}
_N = {"type": "integer", "minimum": 2}
_RANGE = {
    "type": "object",
    "properties": {"start": _NUMBER, "stop": _NUMBER, "step": {"type": "number", "exclusiveMinimum": 0}},
    "required": ["start", "stop", "step"],
    "additionalProperties": False,
}


def _tolerances(**props: dict) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False}


def _kind(name: str, required: list[str], props: dict) -> dict:
    return {
        "type": "object",
        "properties": {"kind": {"const": name}, **props},
        "required": ["kind", *required],
        "additionalProperties": False,
    }


_COMMON = {"alpha": _ALPHA, "interval": _INTERVAL, "n": _N}

SCHEMAS = {
    "caputo_ivp": _kind(
        "caputo_ivp",
        ["alpha", "interval", "x_a", "coefficient"],
        {
            **_COMMON,
            "x_a": _NUMBER,
            "coefficient": _EXPR_OR_NUMBER,
            "forcing": {"type": "string"},
            "method": {"enum": ["vcf", "resolvent", "predictor_corrector", "implicit_trapezoid"]},
            "tolerances": _tolerances(tol=_NUMBER, j_max={"type": "integer", "minimum": 1}),
        },
    ),
    "right_rl_ivp": _kind(
        "right_rl_ivp",
        ["alpha", "interval", "x_b", "coefficient"],
        {
            **_COMMON,
            "x_b": _NUMBER,
            "coefficient": _EXPR_OR_NUMBER,
            "tolerances": _tolerances(tol=_NUMBER, k_max={"type": "integer", "minimum": 1}),
        },
    ),
    "nonlinear_ivp": _kind(
        "nonlinear_ivp",
        ["alpha", "interval", "x_a", "rhs"],
        {
            **_COMMON,
            "x_a": _NUMBER,
            "x_a2": _NUMBER,
            "rhs": {"type": "string"},
            "tolerances": _tolerances(tol_zero=_NUMBER),
        },
    ),
    "herglotz": _kind(
        "herglotz",
        ["alpha", "interval", "x_a", "z_a", "L", "d2L", "d3L", "d4L", "d33L"],
        {
            **_COMMON,
            "x_a": _NUMBER,
            "z_a": _NUMBER,
            **{k: {"type": "string"} for k in ("L", "d2L", "d3L", "d4L", "d33L")},
            "u": _EXPR_OR_NUMBER,
            "u_init": _EXPR_OR_NUMBER,
            "tolerances": _tolerances(
                el_tol=_NUMBER,
                delta=_NUMBER,
                tol=_NUMBER,
                k_max={"type": "integer", "minimum": 1},
                gtol=_NUMBER,
                max_iter={"type": "integer", "minimum": 0},
                fd_step=_NUMBER,
            ),
        },
    ),
    "bernoulli_sweep": _kind(
        "bernoulli_sweep",
        ["alpha", "lambda", "t"],
        {
            "alpha": _RANGE,
            "lambda": _RANGE,
            "t": _RANGE,
            "tolerances": _tolerances(margin_tol=_NUMBER),
        },
    ),
}


class SpecError(ValueError):
    pass


def load_spec(path: str | Path, kinds: Sequence[str] | None = None) -> dict:
    """Read and validate a JSON problem spec.

    :raises SpecError: on unreadable files, schema violations or a kind not
        in *kinds*.
    """
    try:
        spec = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SpecError(f"cannot read spec {path}: {exc}") from exc

    if not isinstance(spec, dict) or spec.get("kind") not in SCHEMAS:
        raise SpecError(f"spec 'kind' must be one of {sorted(SCHEMAS)}")
    try:
        jsonschema.validate(spec, SCHEMAS[spec["kind"]])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SpecError(f"invalid spec at {where}: {exc.message}") from exc

    if kinds is not None and spec["kind"] not in kinds:
        raise SpecError(f"kind {spec['kind']!r} not supported here; expected one of {list(kinds)}")
    if "interval" in spec and not spec["interval"]["a"] < spec["interval"]["b"]:
        raise SpecError("interval requires a < b")
    return spec


# }}}


# {{{ output


def _fmt(v: float) -> str:
    return repr(float(v))


def write_csv(path: str | None, columns: dict[str, np.ndarray], rows: np.ndarray | None = None) -> None:
    """Write columns with shortest round-trip float formatting."""
    names = list(columns)
    data = np.column_stack([np.asarray(columns[k], dtype=float) for k in names])
    if rows is not None:
        data = data[rows]
    lines = [",".join(names)]
    lines += [",".join(_fmt(v) for v in row) for row in data]
    text = "\n".join(lines) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def emit_report(args: argparse.Namespace, report: dict) -> None:
    text = json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n"
    if args.report:
        Path(args.report).write_text(text)
    elif not args.quiet:
        sys.stdout.write(text)


def run_report(command: str, spec: dict, checks: list[dict], started: float, **extra: Any) -> dict:
    return {
        "toolkit": "fracsign",
        "version": __version__,
        "command": command,
        "spec": spec,
        "checks": checks,
        "passed": all(c["passed"] for c in checks),
        **extra,
        "timing": {"seconds": round(time.perf_counter() - started, 6)},
    }


# }}}


# {{{ problem construction


def _grid(spec: dict, args: argparse.Namespace) -> UniformGrid:
    n = args.n if args.n is not None else spec.get("n", DEFAULT_N)
    return UniformGrid(float(spec["interval"]["a"]), float(spec["interval"]["b"]), int(n))


def _fn_of_t(value: float | str) -> float | Callable[[np.ndarray], np.ndarray]:
    if not isinstance(value, str):
        return float(value)
    e = parse(value, {"t"})
    if not e.variables:
        return float(e())
    return lambda t: e(t=t)


def _tol(spec: dict, key: str, default: Any) -> Any:
    return spec.get("tolerances", {}).get(key, default)


def solve_caputo(spec: dict, grid: UniformGrid) -> tuple[GridFunction, dict]:
    g = _fn_of_t(spec["coefficient"])
    forcing = _fn_of_t(spec["forcing"]) if "forcing" in spec else None
    if forcing is not None and not callable(forcing):
        value = forcing
        forcing = lambda t: np.full_like(t, value)  # noqa: E731
    ivp = LeftCaputoIVP(spec["alpha"], grid.a, spec["x_a"], g, forcing)

    method = spec.get("method")
    if method is None:
        method = "vcf" if ivp.is_constant else (
            "resolvent" if forcing is None else "predictor_corrector"
        )
    info: dict = {"method": method}
    if method == "vcf":
        return solve_vcf(ivp, grid), info
    if method == "resolvent":
        sol = solve_resolvent(ivp, grid, tol=_tol(spec, "tol", 1e-10), j_max=_tol(spec, "j_max", 60))
        info.update(terms=sol.terms, last_term=sol.last_term)
        return sol.x, info
    if method == "implicit_trapezoid":
        return solve_implicit_trapezoid(ivp, grid), info

    gv = g if callable(g) else (lambda t, c=g: c)
    fv = forcing if forcing is not None else (lambda t: 0.0)
    rhs = lambda t, x: float(gv(np.float64(t))) * x + float(fv(np.float64(t)))  # noqa: E731
    return predictor_corrector(ivp.alpha, grid.a, ivp.x_a, rhs, grid), info


def solve_right(spec: dict, grid: UniformGrid) -> tuple[GridFunction, dict]:
    ivp = RightRLIVP(spec["alpha"], grid.b, spec["x_b"], _fn_of_t(spec["coefficient"]))
    sol = solve_right_series(ivp, grid, tol=_tol(spec, "tol", 1e-10), k_max=_tol(spec, "k_max", 60))
    return sol.x, {"method": "right_series", "terms": sol.terms, "last_term": sol.last_term}


def _rhs(spec: dict) -> Callable[[float, float], float]:
    e = parse(spec["rhs"], {"t", "x"})
    return lambda t, x: float(e(t=t, x=x))


def solve_nonlinear(spec: dict, grid: UniformGrid, x_a: float | None = None) -> GridFunction:
    x0 = spec["x_a"] if x_a is None else x_a
    return predictor_corrector(spec["alpha"], grid.a, x0, _rhs(spec), grid)


def herglotz_problem(spec: dict) -> HerglotzProblem:
    prob = HerglotzProblem.from_strings(
        spec["alpha"],
        spec["interval"]["a"],
        spec["interval"]["b"],
        spec["x_a"],
        spec["z_a"],
        **{k: spec[k] for k in ("L", "d2L", "d3L", "d4L", "d33L")},
    )
    validate_partials(prob)
    return prob


def _control(value: float | str, grid: UniformGrid) -> GridFunction:
    fn = _fn_of_t(value)
    if callable(fn):
        return GridFunction.from_callable(grid, fn)
    return GridFunction(grid, np.full(grid.n, fn))


# }}}


# {{{ commands


def cmd_ml(args: argparse.Namespace) -> int:
    value = mittag_leffler(args.z, args.alpha, args.beta)
    if value != 0 and (abs(value) >= 1e9 or abs(value) < 1e-3):
        print(f"{value:.10e}")
    else:
        print(f"{value:.10f}")
    return EXIT_OK


def cmd_solve(args: argparse.Namespace) -> int:
    spec = load_spec(args.spec, ["caputo_ivp", "right_rl_ivp", "nonlinear_ivp"])
    grid = _grid(spec, args)
    if spec["kind"] == "caputo_ivp":
        x, _ = solve_caputo(spec, grid)
    elif spec["kind"] == "right_rl_ivp":
        x, _ = solve_right(spec, grid)
    else:
        x = solve_nonlinear(spec, grid)

    write_csv(args.out, {"t": x.t, "x": x.values}, rows=x.regular_mask)
    return EXIT_OK


def _sign_check(name: str, report) -> dict:
    return {"name": name, "passed": report.passed, **report.to_dict()}


def cmd_check_sign(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    spec = load_spec(args.spec, ["caputo_ivp", "right_rl_ivp", "nonlinear_ivp"])
    grid = _grid(spec, args)
    tol_zero = _tol(spec, "tol_zero", 1e-12)
    checks: list[dict] = []
    info: dict = {}

    if spec["kind"] == "caputo_ivp":
        if "forcing" in spec:
            raise SpecError("sign checks apply to the homogeneous problem; remove 'forcing'")
        x, info = solve_caputo(spec, grid)
        sign = check_positive if spec["x_a"] > 0 else check_negative
        checks.append(_sign_check("sign", sign(x)))
    elif spec["kind"] == "right_rl_ivp":
        x, info = solve_right(spec, grid)
        sign = check_positive if spec["x_b"] > 0 else check_negative
        checks.append(_sign_check("sign", sign(x)))
    else:
        f = _rhs(spec)
        bad = [float(t) for t in grid.t if f(float(t), 0.0) != 0.0]
        if bad:
            checks.append({
                "name": "precondition_f_t_0",
                "passed": False,
                "verdict": "precondition_violated",
                "first_node": bad[0],
            })
        else:
            x1 = solve_nonlinear(spec, grid)
            sign = check_positive if spec["x_a"] > 0 else check_negative
            checks.append(_sign_check("sign", sign(x1, tol_zero=tol_zero)))
            if "x_a2" in spec:
                x2 = solve_nonlinear(spec, grid, spec["x_a2"])
                checks.append(_sign_check("separation", check_separation(x1, x2)))

    emit_report(args, run_report("check-sign", spec, checks, started, solver=info))
    return EXIT_OK if all(c["passed"] for c in checks) else EXIT_FAILED


def cmd_bernoulli(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    spec = load_spec(args.spec, ["bernoulli_sweep"])
    ranges = [sweep_range(**spec[k]) for k in ("alpha", "lambda", "t")]
    if any(not 0 < a <= 1 for a in ranges[0]):
        raise SpecError("alpha values must lie in (0, 1]")
    if any(t < 0 for t in ranges[2]):
        raise SpecError("t values must be nonnegative")

    report = bernoulli_sweep(*ranges, tol=_tol(spec, "margin_tol", 1e-10), keep_margins=args.out is not None)
    if args.out is not None:
        A, Lm, T = np.meshgrid(*ranges, indexing="ij")
        write_csv(args.out, {
            "alpha": A.ravel(), "lambda": Lm.ravel(), "t": T.ravel(), "margin": report.margins.ravel(),
        })

    check = {"name": "bernoulli", **report.to_dict()}
    emit_report(args, run_report("bernoulli", spec, [check], started))
    return EXIT_OK if report.passed else EXIT_FAILED


def _herglotz_checks(report) -> list[dict]:
    return [{"name": k, "passed": v} for k, v in report.verdicts.items()]


def cmd_herglotz(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    spec = load_spec(args.spec, ["herglotz"])
    prob = herglotz_problem(spec)
    grid = _grid(spec, args)
    delta = _tol(spec, "delta", None)
    adjoint_opts = {"tol": _tol(spec, "tol", 1e-10), "k_max": _tol(spec, "k_max", 60)}
    extra: dict = {}

    if args.action == "verify":
        if "u" not in spec:
            raise SpecError("'herglotz verify' needs a candidate control 'u'")
        cand = candidate_from_control(prob, _control(spec["u"], grid))
        report, adj = verify(prob, cand, delta=delta, el_tol=_tol(spec, "el_tol", EL_TOL), **adjoint_opts)
    else:
        result = direct_minimize(
            prob,
            _control(spec.get("u_init", 0.0), grid),
            gtol=_tol(spec, "gtol", 1e-6),
            max_iter=_tol(spec, "max_iter", 5000),
            fd_step=_tol(spec, "fd_step", 1e-6),
        )
        cand = result.candidate
        # optimizer outputs are checked at the looser tolerance of a discrete optimum
        report, adj = verify(
            prob, cand, delta=delta, el_tol=_tol(spec, "el_tol", 10 * EL_TOL),
            differential_verdict=False, **adjoint_opts,
        )
        extra["optimizer"] = {
            "iterations": result.iterations,
            "grad_norm": result.grad_norm,
            "converged": result.converged,
            "message": result.message,
        }
        if args.out is not None:
            write_csv(args.out, {"t": cand.t, "u": cand.u.values, "x": cand.x.values, "z": cand.z.values})

    extra["objective"] = cand.objective
    extra["optimality"] = report.to_dict()
    extra["adjoint"] = {"terms": adj.terms, "last_term": adj.last_term}
    checks = _herglotz_checks(report)
    emit_report(args, run_report(f"herglotz {args.action}", spec, checks, started, **extra))
    return EXIT_OK if report.passed else EXIT_FAILED


# }}}


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--spec", required=True, help="JSON problem spec")
    common.add_argument("--out", help="CSV output path (default: stdout for 'solve')")
    common.add_argument("--report", help="write the JSON report here instead of stdout")
    common.add_argument("--n", type=int, help="number of grid nodes (overrides the spec)")
    common.add_argument("--quiet", action="store_true", help="suppress the report on stdout")

    parser = _Parser(prog="fracsign", description="Fractional sign and optimality checks.")
    parser.add_argument("--version", action="version", version=f"fracsign {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    ml = sub.add_parser("ml", help="evaluate E_{alpha,beta}(z)")
    ml.add_argument("--alpha", type=float, required=True)
    ml.add_argument("--beta", type=float, default=1.0)
    ml.add_argument("--z", type=float, required=True)
    ml.set_defaults(func=cmd_ml)

    sub.add_parser("solve", parents=[common], help="solve an IVP, write t,x CSV").set_defaults(func=cmd_solve)
    sub.add_parser("check-sign", parents=[common], help="sign checks on a solution").set_defaults(
        func=cmd_check_sign
    )
    sub.add_parser("bernoulli", parents=[common], help="Bernoulli inequality sweep").set_defaults(
        func=cmd_bernoulli
    )

    hg = sub.add_parser("herglotz", help="Herglotz problems")
    hg_sub = hg.add_subparsers(dest="action", required=True, parser_class=_Parser)
    for action in ("verify", "optimize"):
        hg_sub.add_parser(action, parents=[common]).set_defaults(func=cmd_herglotz)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (
        SpecError,
        ExprError,
        PartialsMismatchError,
        PreconditionError,
        SeriesNotConvergedError,
        SolverError,
        OverflowError,
        ValueError,
    ) as exc:
        print(f"fracsign: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
