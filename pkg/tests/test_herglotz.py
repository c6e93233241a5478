from __future__ import annotations

import math

import numpy as np
import pytest

from fracsign.frac_ops import GridFunction, UniformGrid, left_frac_integral
from fracsign.herglotz import (
    HerglotzProblem,
    PartialsMismatchError,
    ZDependenceError,
    candidate_from_control,
    candidate_from_state,
    classical_conditions,
    direct_minimize,
    el_residual,
    forward_z,
    legendre_check,
    reduce_z_independent,
    solve_adjoint,
    validate_partials,
    verify,
)
from fracsign.special_fn import mittag_leffler_array

QUAD = dict(L="u^2/2 + x", d2L="1", d3L="u", d4L="0", d33L="1")


def _quad(alpha, z_a=0.0, **kw):
    return HerglotzProblem.from_strings(alpha, 0.0, 1.0, 0.0, z_a, **{**QUAD, **kw})


def _control(prob, n, f):
    return candidate_from_control(prob, GridFunction.from_callable(prob.grid(n), f))


def _el_exact_quadratic(alpha):
    # u = -Gamma(alpha) (1 - t)^alpha / Gamma(2 alpha) balances the Euler-Lagrange equation
    return lambda t: -math.gamma(alpha) * (1.0 - t) ** alpha / math.gamma(2 * alpha)


def _el_exact_damped(alpha, c):
    # L = u^2/2 + x + c z: p = -(1-t)^(alpha-1) E_{alpha,alpha}(c (1-t)^alpha)
    def u(t):
        s = 1.0 - t
        w = c * s**alpha
        return -s**alpha * mittag_leffler_array(w, alpha, 2 * alpha) / mittag_leffler_array(w, alpha, alpha)

    return u


# {{{ problem setup


def test_partials_are_validated():
    validate_partials(_quad(0.5))
    with pytest.raises(PartialsMismatchError, match="d3L"):
        validate_partials(_quad(0.5, d3L="2*u"))
    with pytest.raises(PartialsMismatchError, match="d33L"):
        validate_partials(_quad(0.5, d33L="0"))


def test_problem_validation():
    with pytest.raises(ValueError):
        HerglotzProblem.from_strings(1.5, 0.0, 1.0, 0.0, 0.0, **QUAD)
    with pytest.raises(ValueError):
        HerglotzProblem.from_strings(0.5, 1.0, 0.0, 0.0, 0.0, **QUAD)


def test_candidate_from_state_checks_initial_value():
    prob = _quad(0.5)
    grid = prob.grid(65)
    with pytest.raises(ValueError):
        candidate_from_state(prob, GridFunction.from_callable(grid, lambda t: t + 1))
    cand = candidate_from_state(prob, GridFunction.from_callable(grid, lambda t: t))
    assert cand.x.values[0] == 0.0
    assert cand.z.values[0] == 0.0


# }}}


# {{{ forward pass


def test_forward_z_constant_for_zero_lagrangian():
    prob = HerglotzProblem.from_strings(0.6, 0.0, 1.0, 0.0, 2.5, L="u^2", d2L="0", d3L="2*u", d4L="0", d33L="2")
    cand = _control(prob, 129, lambda t: np.zeros_like(t))
    np.testing.assert_array_equal(cand.z.values, 2.5)


def test_forward_z_is_fractional_integral_when_z_independent():
    prob = _quad(0.4, z_a=0.3)
    cand = _control(prob, 1025, np.sin)
    L = GridFunction(cand.grid, prob.along("L", cand))
    expected = 0.3 + left_frac_integral(L, 0.4).values[-1]
    assert cand.objective == pytest.approx(expected, abs=1e-12)


def test_forward_z_classical_value():
    cand = _control(_quad(1.0), 2049, lambda t: t - 1.0)
    assert cand.objective == pytest.approx(-1.0 / 6.0, abs=1e-6)


def test_candidate_state_and_control_consistency():
    prob = _quad(0.5)
    cand = _control(prob, 2049, lambda t: np.cos(2 * t))
    back = candidate_from_state(prob, cand.x)
    inner = cand.t >= 0.1
    assert np.max(np.abs(back.u.values - cand.u.values)[inner]) <= 5e-3


# }}}


# {{{ reduction


def test_reduction_without_initial_cost():
    prob = _quad(0.5)
    assert reduce_z_independent(prob).L_hat is prob.L


def test_reduction_offset_integrates_to_initial_value():
    prob = _quad(0.5, z_a=1.0)
    reduced = reduce_z_independent(prob)
    cand = _control(prob, 257, np.sin)
    base = reduce_z_independent(_quad(0.5)).objective(cand)
    assert reduced.objective(cand) - base == pytest.approx(1.0, abs=1e-14)
    t = cand.t[:-1]
    extra = reduced.integrand(cand)[:-1] - prob.along("L", cand)[:-1]
    np.testing.assert_allclose(extra, math.gamma(0.5) * (1 - t) ** 0.5, rtol=1e-13)


@pytest.mark.parametrize("alpha", [0.5, 0.8, 1.0])
def test_reduced_objective_matches_forward(alpha):
    prob = _quad(alpha, z_a=0.7)
    cand = _control(prob, 2048, np.sin)
    assert reduce_z_independent(prob).objective(cand) == pytest.approx(cand.objective, abs=1e-5)


def test_reduction_rejects_z_dependence():
    prob = _quad(0.5, L="u^2/2 + x - z/2", d4L="-0.5")
    with pytest.raises(ZDependenceError):
        reduce_z_independent(prob)


# }}}


# {{{ adjoint


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.9])
def test_adjoint_without_z_dependence(alpha):
    prob = _quad(alpha)
    cand = _control(prob, 1025, np.sin)
    adj = solve_adjoint(prob, cand)
    t = cand.t[:-1]
    np.testing.assert_allclose(adj.p.values[:-1], -(1 - t) ** (alpha - 1) / math.gamma(alpha), rtol=1e-13)
    assert adj.terminal_value == pytest.approx(-1.0, abs=1e-6)


def test_adjoint_half_order_value():
    prob = _quad(0.5)
    cand = _control(prob, 2049, np.sin)
    p = solve_adjoint(prob, cand).p
    assert p.values[cand.grid.index(0.75)] == pytest.approx(-1.1283792, abs=1e-7)


@pytest.mark.parametrize("c", [-0.5, 0.8])
def test_adjoint_classical_exponential(c):
    prob = _quad(1.0, L=f"u^2/2 + x + {c}*z", d4L=repr(c))
    cand = _control(prob, 1025, np.sin)
    p = solve_adjoint(prob, cand).p
    np.testing.assert_allclose(p.values, -np.exp(c * (1 - cand.t)), rtol=1e-6)


@pytest.mark.parametrize("alpha", [0.4, 0.7])
def test_adjoint_is_negative(alpha):
    prob = _quad(alpha, L="u^2/2 + x + cos(3*t)*z", d4L="cos(3*t)")
    cand = _control(prob, 1025, np.sin)
    adj = solve_adjoint(prob, cand)
    assert adj.max_regular < 0
    assert adj.terminal_value == pytest.approx(-1.0, abs=1e-6)


# }}}


# {{{ Euler-Lagrange residual


def test_el_residual_vanishes_for_pure_control_cost():
    prob = HerglotzProblem.from_strings(0.5, 0.0, 1.0, 0.0, 0.0, L="u^2", d2L="0", d3L="2*u", d4L="0", d33L="2")
    cand = _control(prob, 257, lambda t: np.zeros_like(t))
    report = el_residual(prob, cand, solve_adjoint(prob, cand))
    assert report.el_sup_norm == 0.0
    assert math.isnan(report.el_residual.values[-1])


def test_el_residual_classical_optimum():
    prob = _quad(1.0)
    cand = _control(prob, 2049, lambda t: t - 1.0)
    report = el_residual(prob, cand, solve_adjoint(prob, cand))
    assert report.el_sup_norm <= 1e-12


def test_el_residual_fractional_optimum():
    prob = _quad(0.5)
    cand = _control(prob, 2048, _el_exact_quadratic(0.5))
    assert cand.u.values[0] == pytest.approx(-1.7724539, abs=1e-7)
    report = el_residual(prob, cand, solve_adjoint(prob, cand), delta=0.1)
    assert report.el_sup_norm <= 5e-3


def test_el_residual_detects_non_optimal_control():
    prob = _quad(0.5)
    cand = _control(prob, 1025, lambda t: t - 1.0)
    report = el_residual(prob, cand, solve_adjoint(prob, cand), delta=0.1)
    assert report.el_sup_norm > 0.1
    assert not report.verdicts["euler_lagrange"]


@pytest.mark.parametrize(
    ("alpha", "c", "exact"),
    [(0.5, 0.0, _el_exact_quadratic(0.5)), (0.6, -0.8, _el_exact_damped(0.6, -0.8)), (0.8, 0.5, _el_exact_damped(0.8, 0.5))],
)
def test_el_residual_decreases_under_refinement(alpha, c, exact):
    prob = _quad(alpha, L=f"u^2/2 + x + {c}*z", d4L=repr(c))
    norms = []
    for n in (513, 1025, 2049):
        cand = _control(prob, n, exact)
        norms.append(el_residual(prob, cand, solve_adjoint(prob, cand), delta=0.1).el_sup_norm)
    assert norms[2] <= 5e-3
    if max(norms) <= 1e-12:
        return  # starting weights integrate this candidate exactly
    assert norms[2] < norms[1] < norms[0]


def test_el_exact_control_near_classical_order():
    alpha = 0.999
    prob = _quad(alpha)
    cand = _control(prob, 2049, _el_exact_quadratic(alpha))
    assert el_residual(prob, cand, solve_adjoint(prob, cand), delta=0.1).el_sup_norm <= 5e-3
    window = cand.t <= 0.9
    assert np.max(np.abs(cand.u.values - (cand.t - 1.0))[window]) <= 5e-2


# }}}


# {{{ Legendre condition


@pytest.mark.parametrize(
    ("L", "d3L", "d33L", "ok"),
    [("u^2/2 + x", "u", "1", True), ("-u^2", "-2*u", "-2", False), ("u^4", "4*u^3", "12*u^2", True)],
)
def test_legendre_examples(L, d3L, d33L, ok):
    d2L = "1" if "x" in L else "0"
    prob = HerglotzProblem.from_strings(0.5, 0.0, 1.0, 0.0, 0.0, L=L, d2L=d2L, d3L=d3L, d4L="0", d33L=d33L)
    validate_partials(prob)
    u = (lambda t: np.zeros_like(t)) if L == "u^4" else np.sin
    cand = _control(prob, 129, u)
    adj = solve_adjoint(prob, cand)
    report = legendre_check(prob, cand, adj)
    assert report.verdicts["legendre"] is ok
    # with p < 0 the multiplier form p d33L <= 0 gives the same verdict
    assert report.verdicts["legendre_multiplier_form"] is ok


def test_legendre_minimum_is_exact():
    prob = _quad(0.5)
    cand = _control(prob, 257, _el_exact_quadratic(0.5))
    assert legendre_check(prob, cand).legendre_min == 1.0


@pytest.mark.parametrize("seed", range(5))
def test_sign_cancellation_equivalence(seed):
    rng = np.random.default_rng(seed)
    a2, a4 = (float(v) for v in rng.uniform(-1, 1, 2))
    prob = HerglotzProblem.from_strings(
        float(rng.uniform(0.3, 1.0)), 0.0, 1.0, 0.0, 0.0,
        L=f"{a2!r}*u^3/6 + x + {a4!r}*z", d2L="1", d3L=f"{a2!r}*u^2/2", d4L=repr(a4), d33L=f"{a2!r}*u",
    )
    validate_partials(prob)
    cand = _control(prob, 257, lambda t: np.cos(5 * t))
    report = legendre_check(prob, cand, solve_adjoint(prob, cand))
    assert report.verdicts["legendre"] == report.verdicts["legendre_multiplier_form"]


# }}}


# {{{ classical conditions


def test_classical_conditions_quadratic():
    prob = _quad(1.0)
    cand = _control(prob, 2049, lambda t: t - 1.0)
    report = classical_conditions(prob, cand, delta=0.1)
    assert report.integral_sup_norm <= 1e-12
    assert report.differential_sup_norm <= 1e-10


def test_classical_conditions_damped():
    prob = HerglotzProblem.from_strings(1.0, 0.0, 1.0, 0.5, 0.0, L="u^2/2 - z", d2L="0", d3L="u", d4L="-1", d33L="1")
    cand = _control(prob, 513, lambda t: np.zeros_like(t))
    report = classical_conditions(prob, cand)
    assert report.integral_sup_norm == 0.0
    assert report.differential_sup_norm == 0.0
    # any nonzero multiple of e^(-t) satisfies the differential form but not the natural condition
    moved = _control(prob, 513, lambda t: np.exp(-t))
    report = classical_conditions(prob, moved)
    assert report.differential_sup_norm <= 1e-5
    assert report.integral_sup_norm > 0.1


def test_classical_conditions_shifted_control():
    prob = HerglotzProblem.from_strings(1.0, 0.0, 1.0, 0.0, 0.0, L="(u - 1)^2", d2L="0", d3L="2*(u - 1)", d4L="0", d33L="2")
    cand = _control(prob, 129, lambda t: np.ones_like(t))
    report = classical_conditions(prob, cand)
    assert report.integral_sup_norm == 0.0
    assert report.differential_sup_norm == 0.0


def test_classical_conditions_require_order_one():
    prob = _quad(0.5)
    with pytest.raises(ValueError):
        classical_conditions(prob, _control(prob, 33, np.sin))


def test_verify_merges_all_checks():
    prob = _quad(1.0)
    report, adj = verify(prob, _control(prob, 1025, lambda t: t - 1.0), delta=0.1)
    assert set(report.verdicts) == {
        "euler_lagrange", "legendre", "legendre_multiplier_form", "adjoint_negative",
        "classical_integral", "classical_differential",
    }
    assert report.passed
    d = report.to_dict()
    assert "el_residual" not in d
    assert d["passed"] is True


# }}}


# {{{ direct minimization


def test_minimize_pure_control_cost():
    prob = HerglotzProblem.from_strings(1.0, 0.0, 1.0, 0.0, 0.25, L="u^2", d2L="0", d3L="2*u", d4L="0", d33L="2")
    grid = prob.grid(65)
    result = direct_minimize(prob, GridFunction(grid, np.ones(grid.n)))
    assert result.converged
    assert np.max(np.abs(result.candidate.u.values)) <= 1e-5
    assert result.candidate.objective == pytest.approx(0.25, abs=1e-9)


@pytest.fixture(scope="module")
def classical_minimum():
    prob = _quad(1.0)
    grid = prob.grid(257)
    return prob, direct_minimize(prob, GridFunction(grid, np.zeros(grid.n)))


def test_minimize_classical_problem(classical_minimum):
    _, result = classical_minimum
    cand = result.candidate
    assert result.converged
    assert np.max(np.abs(cand.u.values - (cand.t - 1.0))) <= 2e-2
    assert cand.objective == pytest.approx(-1.0 / 6.0, abs=1e-3)


def test_minimum_beats_random_perturbations(classical_minimum):
    prob, result = classical_minimum
    rng = np.random.default_rng(7)
    u = result.candidate.u
    for _ in range(10):
        du = rng.normal(scale=1e-2, size=u.grid.n)
        other = candidate_from_control(prob, GridFunction(u.grid, u.values + du))
        assert result.candidate.objective <= other.objective


def test_minimize_near_classical_order():
    prob = _quad(0.999)
    grid = prob.grid(257)
    result = direct_minimize(prob, GridFunction(grid, np.zeros(grid.n)))
    window = grid.t <= 0.9
    assert np.max(np.abs(result.candidate.u.values - (grid.t - 1.0))[window]) <= 5e-2


def test_minimize_reports_iteration_cap():
    prob = _quad(1.0)
    grid = prob.grid(33)
    result = direct_minimize(prob, GridFunction(grid, np.zeros(grid.n)), max_iter=1)
    assert not result.converged
    assert result.iterations == 1
    assert result.message == "iteration cap reached"


def test_minimize_rejects_nonfinite_start():
    prob = _quad(1.0)
    grid = prob.grid(9)
    with pytest.raises(ValueError):
        direct_minimize(prob, GridFunction(grid, np.full(grid.n, np.nan)))


# }}}
