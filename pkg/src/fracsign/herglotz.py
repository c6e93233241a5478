r"""Fractional Herglotz problems.

Minimize :math:`z(b)` subject to

.. math::

    {}^C D^\alpha_{a+} z = L(t, x, {}^C D^\alpha_{a+} x, z),
    \qquad x(a) = x_a, \quad z(a) = z_a.

The control is :math:`u = {}^C D^\alpha_{a+} x`, so ``x = x_a + I^alpha[u]``.
Candidates are verified through the adjoint

.. math::

    D^\alpha_{b-} p = p\,\partial_4 L, \qquad I^{1-\alpha}_{b-}[p](b) = -1,

the Euler-Lagrange equation in integral form
:math:`I^\alpha_{b-}[p\,\partial_2 L] + p\,\partial_3 L = 0` on ``[a, b)`` and the
Legendre condition :math:`\partial_{33} L \ge 0`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Any, Callable, Mapping

import numpy as np
from scipy.integrate import cumulative_trapezoid

from fracsign.expr import VARIABLES, BinOp, Expression, Num, Var, parse
from fracsign.frac_ops import (
    GridFunction,
    UniformGrid,
    _trapezoid_weights,
    caputo_left_derivative,
    left_frac_integral,
    right_frac_integral,
    right_frac_integral_at_b,
)
from fracsign.linear_solvers import (
    RightRLIVP,
    SolverError,
    _adams,
    solve_right_series,
    start_exponents,
)
from fracsign.special_fn import gamma, rgamma

Lagrangian = Callable[..., Any]
"""Callable taking keyword arguments ``t, x, u, z`` (an :class:`Expression` works)."""

EL_TOL = 5.0e-3
LEGENDRE_TOL = 1.0e-10
PARTIALS_RTOL = 1.0e-4


class PartialsMismatchError(ValueError):
    """Raised when supplied partial derivatives disagree with finite differences."""


class ZDependenceError(ValueError):
    """Raised when a reduction requires ``L`` to be independent of ``z``."""


def _eval(fn: Lagrangian, t, x, u, z) -> np.ndarray:
    shape = np.broadcast(np.asarray(t), np.asarray(x), np.asarray(u), np.asarray(z)).shape
    value = fn(t=t, x=x, u=u, z=z)
    return np.broadcast_to(np.asarray(value, dtype=float), shape).copy()


# {{{ problem and candidates


@dataclass(frozen=True)
class HerglotzProblem:
    alpha: float
    a: float
    b: float
    x_a: float
    z_a: float
    L: Lagrangian
    d2L: Lagrangian
    d3L: Lagrangian
    d4L: Lagrangian
    d33L: Lagrangian

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1]: {self.alpha}")
        if not self.a < self.b:
            raise ValueError(f"expected a < b: got [{self.a}, {self.b}]")

    @classmethod
    def from_strings(
        cls,
        alpha: float,
        a: float,
        b: float,
        x_a: float,
        z_a: float,
        *,
        L: str,
        d2L: str,
        d3L: str,
        d4L: str,
        d33L: str,
    ) -> HerglotzProblem:
        exprs = {k: parse(v, VARIABLES) for k, v in
                 dict(L=L, d2L=d2L, d3L=d3L, d4L=d4L, d33L=d33L).items()}
        return cls(alpha, a, b, x_a, z_a, **exprs)

    def grid(self, n: int) -> UniformGrid:
        return UniformGrid(self.a, self.b, n)

    def along(self, name: str, cand: CandidateSolution) -> np.ndarray:
        """Evaluate ``L`` or one of its partials along a candidate."""
        fn = getattr(self, name)
        return _eval(fn, cand.t, cand.x.values, cand.u.values, cand.z.values)


def validate_partials(
    prob: HerglotzProblem,
    samples: int = 25,
    seed: int = 0,
    rtol: float = PARTIALS_RTOL,
    box: float = 2.0,
) -> None:
    """Compare the supplied partials against central differences.

    Points are drawn with ``t`` uniform on ``[a, b]`` and ``x, u, z`` uniform
    on ``[-box, box]``. A partial passes when
    ``|fd - d| <= rtol * max(1, |d|)``.

    :raises PartialsMismatchError: listing every failing partial.
    """
    rng = np.random.default_rng(seed)
    t = rng.uniform(prob.a, prob.b, samples)
    pts = {"t": t, **{k: rng.uniform(-box, box, samples) for k in ("x", "u", "z")}}

    def central(fn: Lagrangian, var: str) -> np.ndarray:
        step = 1.0e-5 * np.maximum(1.0, np.abs(pts[var]))
        hi = {**pts, var: pts[var] + step}
        lo = {**pts, var: pts[var] - step}
        return (_eval(fn, **hi) - _eval(fn, **lo)) / (2.0 * step)

    checks = [
        ("d2L", prob.L, "x"),
        ("d3L", prob.L, "u"),
        ("d4L", prob.L, "z"),
        ("d33L", prob.d3L, "u"),
    ]
    bad = []
    for name, base, var in checks:
        given = _eval(getattr(prob, name), **pts)
        err = np.abs(central(base, var) - given)
        worst = float(np.max(err / np.maximum(1.0, np.abs(given))))
        if worst > rtol:
            bad.append(f"{name} (relative error {worst:.2e})")

    if bad:
        raise PartialsMismatchError("partials inconsistent with L: " + ", ".join(bad))


@dataclass(frozen=True)
class CandidateSolution:
    x: GridFunction
    u: GridFunction
    z: GridFunction

    @property
    def t(self) -> np.ndarray:
        return self.x.t

    @property
    def grid(self) -> UniformGrid:
        return self.x.grid

    @property
    def objective(self) -> float:
        return float(self.z.values[-1])


def _integral_matrix(grid: UniformGrid, alpha: float) -> np.ndarray:
    # I^alpha as a matrix acting on node values (product trapezoid)
    return _trapezoid_weights(grid.n, alpha) * (grid.h**alpha * rgamma(alpha + 2.0))


def _forward_batch(
    prob: HerglotzProblem, grid: UniformGrid, X: np.ndarray, U: np.ndarray
) -> np.ndarray:
    t = grid.t

    def rhs(i: int, z: np.ndarray) -> np.ndarray:
        return _eval(prob.L, t[i], X[i], U[i], z)

    with np.errstate(over="raise", invalid="raise"):
        try:
            return _adams(prob.alpha, np.full(X.shape[1], float(prob.z_a)), rhs, grid.n, grid.h)
        except FloatingPointError as exc:
            raise SolverError(str(exc)) from exc


def forward_z(prob: HerglotzProblem, x: GridFunction, u: GridFunction) -> GridFunction:
    """Integrate the ``z`` equation along ``(x, u)`` by the fractional Adams scheme."""
    Z = _forward_batch(prob, x.grid, x.values[:, None], u.values[:, None])
    return GridFunction(x.grid, Z[:, 0])


def candidate_from_control(prob: HerglotzProblem, u: GridFunction) -> CandidateSolution:
    """Reconstruct ``x = x_a + I^alpha[u]`` and integrate ``z``."""
    if u.side is not None:
        raise ValueError("controls must be finite at every node")
    x = GridFunction(u.grid, prob.x_a + left_frac_integral(u, prob.alpha).values)
    return CandidateSolution(x, u, forward_z(prob, x, u))


def candidate_from_state(prob: HerglotzProblem, x: GridFunction) -> CandidateSolution:
    """Build a candidate from a state with ``x(a) = x_a``; ``u`` by the L1 scheme."""
    if not math.isclose(x.values[0], prob.x_a, rel_tol=1e-12, abs_tol=1e-12):
        raise ValueError(f"x(a) = {x.values[0]} differs from x_a = {prob.x_a}")
    u = caputo_left_derivative(x, prob.alpha)
    return CandidateSolution(x, u, forward_z(prob, x, u))


# }}}


# {{{ reduction for z-independent Lagrangians


@dataclass(frozen=True)
class ReducedProblem:
    r"""Basic fractional problem equivalent to a ``z``-independent Herglotz problem.

    :math:`\hat L(t, x, u) = L(t, x, u) + \Gamma(\alpha) z_a (b - t)^{1 - \alpha} / (b - a)`
    and the objective is :math:`I^\alpha_{a+}[\hat L](b)`.
    """

    prob: HerglotzProblem
    L_hat: Lagrangian

    @property
    def offset_coefficient(self) -> float:
        p = self.prob
        return gamma(p.alpha) * p.z_a / (p.b - p.a)

    def integrand(self, cand: CandidateSolution) -> np.ndarray:
        z0 = np.zeros_like(cand.t)
        return _eval(self.L_hat, cand.t, cand.x.values, cand.u.values, z0)

    def objective(self, cand: CandidateSolution) -> float:
        """Value of :math:`I^\\alpha_{a+}[\\hat L](b)`.

        The added term times the kernel ``(b - t)^(alpha - 1)`` is constant and
        is integrated exactly; ``L`` itself goes through the product rule.
        """
        p = self.prob
        z0 = np.zeros_like(cand.t)
        L = GridFunction(cand.grid, _eval(p.L, cand.t, cand.x.values, cand.u.values, z0))
        head = left_frac_integral(L, p.alpha).values[-1]
        return float(head + self.offset_coefficient * (p.b - p.a) * rgamma(p.alpha))


def reduce_z_independent(
    prob: HerglotzProblem, samples: int = 25, seed: int = 0, box: float = 2.0
) -> ReducedProblem:
    """Fold the initial value ``z_a`` into the integrand.

    :raises ZDependenceError: if ``d4L`` is nonzero at a sample point.
    """
    rng = np.random.default_rng(seed)
    pts = {
        "t": rng.uniform(prob.a, prob.b, samples),
        **{k: rng.uniform(-box, box, samples) for k in ("x", "u", "z")},
    }
    d4 = _eval(prob.d4L, **pts)
    if np.any(d4 != 0.0):
        raise ZDependenceError(f"L depends on z: max |d4L| = {np.max(np.abs(d4)):.3e}")

    c = gamma(prob.alpha) * prob.z_a / (prob.b - prob.a)
    if c == 0.0:
        return ReducedProblem(prob, prob.L)

    if isinstance(prob.L, Expression):
        extra = BinOp(
            "*", Num(c), BinOp("^", BinOp("-", Num(float(prob.b)), Var("t")), Num(1.0 - prob.alpha))
        )
        tree = BinOp("+", prob.L.tree, extra)
        L_hat: Lagrangian = Expression(tree.to_source(), tree, prob.L.allowed_vars)
    else:
        base = prob.L

        def L_hat(*, t, x, u, z=0.0):
            return base(t=t, x=x, u=u, z=z) + c * (prob.b - np.asarray(t)) ** (1.0 - prob.alpha)

    return ReducedProblem(prob, L_hat)


# }}}


# {{{ optimality conditions


@dataclass(frozen=True)
class AdjointSolution:
    p: GridFunction
    terms: int
    last_term: float

    @property
    def terminal_value(self) -> float:
        """:math:`I^{1-\\alpha}_{b-}[p](b)` from the singular-panel closed form."""
        if self.p.side is None:
            return float(self.p.values[-1])
        # p ~ c (b - t)^(alpha - 1), so the order 1 - alpha is -sigma
        return right_frac_integral_at_b(self.p, -self.p.sigma)

    @property
    def max_regular(self) -> float:
        return float(np.max(self.p.values[self.p.regular_mask]))


def solve_adjoint(
    prob: HerglotzProblem, cand: CandidateSolution, tol: float = 1.0e-10, k_max: int = 60
) -> AdjointSolution:
    """Solve the right-sided adjoint equation with ``g = d4L`` along *cand*."""
    g = prob.along("d4L", cand)
    ivp = RightRLIVP(prob.alpha, prob.b, -1.0, lambda t: g)
    sol = solve_right_series(ivp, cand.grid, tol=tol, k_max=k_max)
    return AdjointSolution(sol.x, sol.terms, sol.last_term)


@dataclass(frozen=True)
class OptimalityReport:
    """Norms and verdicts of the optimality checks that were run.

    Fields left as ``None`` belong to checks that were not performed.
    """

    alpha: float
    delta: float
    el_residual: GridFunction | None = field(default=None, repr=False)
    el_sup_norm: float | None = None
    el_tol: float = EL_TOL
    legendre_min: float | None = None
    legendre_multiplier_ok: bool | None = None
    legendre_tol: float = LEGENDRE_TOL
    adjoint_max: float | None = None
    adjoint_terminal: float | None = None
    integral_sup_norm: float | None = None
    differential_sup_norm: float | None = None
    differential_verdict: bool = True
    classical_tol: float = EL_TOL

    @property
    def verdicts(self) -> dict[str, bool]:
        out = {}
        if self.el_sup_norm is not None:
            out["euler_lagrange"] = self.el_sup_norm <= self.el_tol
        if self.legendre_min is not None:
            out["legendre"] = self.legendre_min >= -self.legendre_tol
        if self.legendre_multiplier_ok is not None:
            out["legendre_multiplier_form"] = self.legendre_multiplier_ok
        if self.adjoint_max is not None:
            out["adjoint_negative"] = self.adjoint_max < 0.0
        if self.integral_sup_norm is not None:
            out["classical_integral"] = self.integral_sup_norm <= self.classical_tol
        if self.differential_sup_norm is not None and self.differential_verdict:
            out["classical_differential"] = self.differential_sup_norm <= self.classical_tol
        return out

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def merge(self, other: OptimalityReport) -> OptimalityReport:
        updates = {
            f.name: getattr(other, f.name)
            for f in fields(other)
            if getattr(other, f.name) is not None
            and f.name not in ("alpha", "delta")
            and getattr(other, f.name) != getattr(OptimalityReport, f.name, None)
        }
        return replace(self, **updates)

    def to_dict(self) -> dict:
        out = {
            f.name: getattr(self, f.name)
            for f in fields(self)
            if f.name != "el_residual" and getattr(self, f.name) is not None
        }
        out["verdicts"] = self.verdicts
        out["passed"] = self.passed
        return out


def _default_delta(prob: HerglotzProblem, delta: float | None) -> float:
    return 0.05 * (prob.b - prob.a) if delta is None else float(delta)


def _window(t: np.ndarray, b: float, delta: float) -> np.ndarray:
    return t <= b - delta + 1.0e-12 * max(1.0, abs(b))


def el_residual(
    prob: HerglotzProblem,
    cand: CandidateSolution,
    adj: AdjointSolution,
    delta: float | None = None,
    tol: float = EL_TOL,
) -> OptimalityReport:
    r"""Residual of :math:`I^\alpha_{b-}[p\,\partial_2 L] + p\,\partial_3 L` on ``[a, b)``.

    The sup norm is taken over ``[a, b - delta]``; the node at ``b`` is NaN.
    """
    delta = _default_delta(prob, delta)
    p = adj.p
    d2 = prob.along("d2L", cand)
    d3 = prob.along("d3L", cand)

    exps = start_exponents(prob.alpha) if p.side is not None else ()
    I = right_frac_integral(p * d2, prob.alpha, start_exponents=exps)
    r = I.values + p.values * d3
    r[-1] = np.nan
    residual = GridFunction(cand.grid, r)

    mask = _window(cand.t, prob.b, delta)
    return OptimalityReport(
        alpha=prob.alpha,
        delta=delta,
        el_residual=residual,
        el_sup_norm=float(np.max(np.abs(r[mask]))),
        el_tol=tol,
        adjoint_max=adj.max_regular,
        adjoint_terminal=float(adj.terminal_value),
    )


def legendre_check(
    prob: HerglotzProblem,
    cand: CandidateSolution,
    adj: AdjointSolution | None = None,
    tol: float = LEGENDRE_TOL,
) -> OptimalityReport:
    """Minimum of ``d33L`` along *cand*.

    With an adjoint, also evaluates the multiplier form ``p d33L <= 0`` node by
    node (scaled by ``|p|``); the two verdicts agree whenever ``p < 0``.
    """
    d33 = prob.along("d33L", cand)
    multiplier_ok = None
    if adj is not None:
        mask = adj.p.regular_mask
        pv = adj.p.values[mask]
        multiplier_ok = bool(np.all(pv * d33[mask] <= tol * np.abs(pv)))

    return OptimalityReport(
        alpha=prob.alpha,
        delta=_default_delta(prob, None),
        legendre_min=float(np.min(d33)),
        legendre_multiplier_ok=multiplier_ok,
        legendre_tol=tol,
    )


def classical_conditions(
    prob: HerglotzProblem,
    cand: CandidateSolution,
    delta: float | None = None,
    tol: float = EL_TOL,
    differential_verdict: bool = True,
) -> OptimalityReport:
    r"""Integral and differential Herglotz conditions for ``alpha = 1``.

    Integral form:
    :math:`\int_t^b e^{\int_s^b \partial_4 L}\partial_2 L\,ds + e^{\int_t^b \partial_4 L}\partial_3 L`.
    Differential form:
    :math:`\partial_2 L + \partial_4 L\,\partial_3 L - \frac{d}{dt}\partial_3 L`.

    The differential form differentiates ``d3L`` numerically. For controls
    from :func:`direct_minimize` the O(h) endpoint layer of the discrete
    optimum dominates that derivative, so callers may keep the norm as a
    diagnostic with ``differential_verdict=False``.
    """
    if prob.alpha != 1.0:
        raise ValueError(f"classical conditions require alpha = 1: {prob.alpha}")

    delta = _default_delta(prob, delta)
    h = cand.grid.h
    d2 = prob.along("d2L", cand)
    d3 = prob.along("d3L", cand)
    d4 = prob.along("d4L", cand)

    def tail(f: np.ndarray) -> np.ndarray:
        # int_t^b f(s) ds at every node
        return cumulative_trapezoid(f[::-1], dx=h, initial=0.0)[::-1]

    growth = np.exp(tail(d4))
    r_int = tail(growth * d2) + growth * d3
    r_diff = d2 + d4 * d3 - np.gradient(d3, h, edge_order=2)

    mask = _window(cand.t, prob.b, delta)
    return OptimalityReport(
        alpha=prob.alpha,
        delta=delta,
        integral_sup_norm=float(np.max(np.abs(r_int[mask]))),
        differential_sup_norm=float(np.max(np.abs(r_diff[mask]))),
        differential_verdict=differential_verdict,
        classical_tol=tol,
    )


def verify(
    prob: HerglotzProblem,
    cand: CandidateSolution,
    delta: float | None = None,
    el_tol: float = EL_TOL,
    tol: float = 1.0e-10,
    k_max: int = 60,
    differential_verdict: bool = True,
) -> tuple[OptimalityReport, AdjointSolution]:
    """Run the adjoint solve and every applicable check on *cand*."""
    adj = solve_adjoint(prob, cand, tol=tol, k_max=k_max)
    report = el_residual(prob, cand, adj, delta=delta, tol=el_tol)
    report = report.merge(legendre_check(prob, cand, adj))
    if prob.alpha == 1.0:
        report = report.merge(classical_conditions(
            prob, cand, delta=delta, tol=el_tol, differential_verdict=differential_verdict
        ))
    return report, adj


# }}}


# {{{ direct minimization


@dataclass(frozen=True)
class MinimizeResult:
    candidate: CandidateSolution
    iterations: int
    grad_norm: float
    converged: bool
    message: str


def direct_minimize(
    prob: HerglotzProblem,
    u_init: GridFunction,
    gtol: float = 1.0e-6,
    max_iter: int = 5000,
    fd_step: float = 1.0e-6,
    armijo: float = 1.0e-4,
    shrink: float = 0.5,
    max_backtracks: int = 60,
) -> MinimizeResult:
    """Steepest descent on ``z(b)`` over the control values at all nodes.

    Gradients are forward differences with relative step *fd_step*; all
    perturbed controls are integrated as one batch. Each iteration tries
    twice the previous accepted step and backtracks by *shrink* until the
    Armijo condition holds. A failed line search ends the run with the best
    control found so far.
    """
    grid = u_init.grid
    M = _integral_matrix(grid, prob.alpha)

    def objective(U: np.ndarray) -> np.ndarray:
        X = prob.x_a + M @ U
        return _forward_batch(prob, grid, X, U)[-1]

    def gradient(u: np.ndarray, J0: float) -> np.ndarray:
        steps = fd_step * np.maximum(1.0, np.abs(u))
        U = u[:, None] + np.diag(steps)
        return (objective(U) - J0) / steps

    u = np.array(u_init.values, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError("initial control must be finite")

    J = float(objective(u[:, None])[0])
    step = 1.0
    message = "iteration cap reached"
    converged = False
    it = 0
    gnorm = math.inf
    while it < max_iter:
        g = gradient(u, J)
        gnorm = float(np.max(np.abs(g)))
        if gnorm < gtol:
            converged = True
            message = "gradient tolerance reached"
            break

        slope = float(g @ g)
        s = 2.0 * step
        for _ in range(max_backtracks):
            trial = u - s * g
            J_trial = float(objective(trial[:, None])[0])
            if J_trial <= J - armijo * s * slope:
                break
            s *= shrink
        else:
            message = "line search failed"
            break

        u, J, step = trial, J_trial, s
        it += 1

    cand = candidate_from_control(prob, GridFunction(grid, u))
    return MinimizeResult(cand, it, gnorm, converged, message)


# }}}
