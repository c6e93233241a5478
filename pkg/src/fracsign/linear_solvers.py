r"""Solvers for linear (and Lipschitz nonlinear) fractional initial value problems.

Three independent routes are provided for the left Caputo problem
:math:`{}^C D^\alpha_{a+} x = g(t) x + f(t)`:

* :func:`solve_vcf` - closed-form variation of constants with Mittag-Leffler
  kernels (constant coefficient only);
* :func:`solve_resolvent` - the iterated-kernel (Neumann) series of the
  equivalent Volterra equation;
* :func:`predictor_corrector` - the fractional Adams-Bashforth-Moulton scheme.

:func:`solve_implicit_trapezoid` is a stiffly stable companion for strongly
negative coefficients, with a log-scaled variant for solutions that grow past
the double range.

:func:`solve_right_series` sums the series for the right Riemann-Liouville
problem :math:`D^\alpha_{b-} x = g(t) x` with :math:`I^{1-\alpha}_{b-}[x](b) = x_b`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy import special

from fracsign.frac_ops import (
    GridFunction,
    UniformGrid,
    _distance,
    _factor_weights,
    _left_integral_factor,
    _trapezoid_weights,
    left_frac_integral,
)
from fracsign.special_fn import mittag_leffler_array, rgamma

Coefficient = Union[float, Callable[[np.ndarray], np.ndarray]]

MAX_KERNEL_NODES = 4096


class NonConstantCoefficientError(ValueError):
    pass


class SeriesNotConvergedError(ArithmeticError):
    """Raised when a truncated series is still above tolerance at its cap."""

    def __init__(self, message: str, terms: int, last_term: float) -> None:
        super().__init__(message)
        self.terms = terms
        self.last_term = last_term


class SolverError(ArithmeticError):
    """Raised when a time stepper produces non-finite values."""


def sample(fn: Coefficient | None, t: np.ndarray, default: float = 0.0) -> np.ndarray:
    """Evaluate a constant or a callable coefficient on the nodes *t*."""
    if fn is None:
        return np.full(t.shape, default)
    if callable(fn):
        return np.broadcast_to(np.asarray(fn(t), dtype=float), t.shape).copy()
    return np.full(t.shape, float(fn))


# {{{ problems


@dataclass(frozen=True)
class LeftCaputoIVP:
    r"""The problem :math:`{}^C D^\alpha_{a+} x = g(t) x + f(t)`, :math:`x(a) = x_a`.

    *coefficient* is either a constant ``lambda`` or a callable ``g(t)``;
    *forcing* is an optional callable ``f(t)``.
    """

    alpha: float
    a: float
    x_a: float
    coefficient: Coefficient = 0.0
    forcing: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1]: {self.alpha}")

    @property
    def is_constant(self) -> bool:
        return not callable(self.coefficient)


@dataclass(frozen=True)
class RightRLIVP:
    r"""The problem :math:`D^\alpha_{b-} x = g(t) x`, :math:`I^{1-\alpha}_{b-}[x](b) = x_b`.

    ``alpha = 1`` is accepted and reduces to :math:`-x' = g x`, :math:`x(b) = x_b`.
    """

    alpha: float
    b: float
    x_b: float
    coefficient: Coefficient = 0.0

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1]: {self.alpha}")


@dataclass(frozen=True)
class SeriesSolution:
    """A truncated series solution together with its truncation diagnostics."""

    x: GridFunction
    terms: int
    last_term: float
    tol: float

    @property
    def converged(self) -> bool:
        return self.last_term < self.tol


# }}}


# {{{ variation of constants


def solve_vcf(p: LeftCaputoIVP, grid: UniformGrid) -> GridFunction:
    r"""Variation of constants formula for a constant coefficient ``lambda``.

    .. math::

        x(t) = x_a E_\alpha(\lambda (t - a)^\alpha)
            + \int_a^t (t - s)^{\alpha - 1} E_{\alpha,\alpha}(\lambda (t - s)^\alpha) f(s) ds
    """
    if not p.is_constant:
        raise NonConstantCoefficientError("solve_vcf requires a constant coefficient")
    if grid.a != p.a:
        raise ValueError(f"grid starts at {grid.a}, problem at {p.a}")

    alpha = p.alpha
    lam = float(p.coefficient)
    tau = _distance(grid, "a")

    x = p.x_a * mittag_leffler_array(lam * tau**alpha, alpha, 1.0)
    if p.forcing is not None:
        n = grid.n
        f = sample(p.forcing, grid.t)
        kernel = mittag_leffler_array(lam * tau**alpha, alpha, alpha)
        ii, jj = np.indices((n, n))
        K = kernel[np.clip(ii - jj, 0, n - 1)]
        A = _trapezoid_weights(n, alpha)
        x = x + grid.h**alpha / (alpha * (alpha + 1.0)) * ((A * K) @ f)

    return GridFunction(grid, x)


# }}}


# {{{ iterated kernels


@dataclass(frozen=True)
class KernelStack:
    r"""Iterated kernels :math:`k_j(t_i, s_m)` for ``s_m <= t_i``.

    Each kernel is stored through its smooth factor ``kappa_j`` with
    :math:`k_j(t, s) = (t - s)^{j\alpha - 1} \kappa_j(t, s)`, which stays finite
    on the diagonal.
    """

    alpha: float
    grid: UniformGrid
    g: np.ndarray
    factors: tuple[np.ndarray, ...]

    @property
    def j_max(self) -> int:
        return len(self.factors)

    def kernel(self, j: int) -> np.ndarray:
        """Lower triangular samples of ``k_j``; the diagonal holds ``inf`` where
        the kernel is singular."""
        kappa = self.factors[j - 1]
        n = self.grid.n
        ii, mm = np.indices((n, n))
        dist = (ii - mm) * self.grid.h
        order = j * self.alpha - 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            k = np.where(ii > mm, np.abs(dist) ** order, 0.0) * kappa
        if order < 0:
            diag = np.where(np.diag(kappa) != 0.0, np.inf, 0.0)
        elif order == 0:
            diag = np.diag(kappa)
        else:
            diag = np.zeros(n)
        k[np.diag_indices(n)] = diag
        return k

    def integrated(self, j: int) -> np.ndarray:
        r"""Samples of :math:`\int_a^{t_i} k_j(t_i, s) ds`."""
        order = j * self.alpha
        kappa = self.factors[j - 1]
        n = self.grid.n
        A = _trapezoid_weights(n, order)
        # weights act on s_m for fixed t_i, reversed relative to kappa's layout
        out = np.einsum("ij,ij->i", A, np.tril(kappa))
        return out * self.grid.h**order / (order * (order + 1.0))


def build_kernels(
    g: Coefficient, alpha: float, grid: UniformGrid, j_max: int
) -> KernelStack:
    r"""Build :math:`k_1 = (t - s)^{\alpha - 1} g(s) / \Gamma(\alpha)` and
    :math:`k_{j+1}(t, s) = \int_s^t k(t, \tau) k_j(\tau, s) d\tau`.

    Cost is ``O(j_max n^3)``; intended for moderate ``n``.
    """
    if j_max < 1:
        raise ValueError(f"j_max must be at least 1: {j_max}")
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1]: {alpha}")
    n = grid.n
    if n > MAX_KERNEL_NODES:
        raise ValueError(f"kernel stacks support at most {MAX_KERNEL_NODES} nodes")

    gv = sample(g, grid.t)
    ra = rgamma(alpha)

    # kappa_1(t_i, s_m) = g(s_m) / Gamma(alpha)
    kappa = np.tril(np.broadcast_to(gv * ra, (n, n))).copy()
    factors = [kappa]
    for j in range(1, j_max):
        sigma = j * alpha - 1.0
        # weights on [s_m, b] are the leading block of the full-grid weights
        W, scale = _factor_weights(n, alpha, sigma)
        diag = special.beta(sigma + 1.0, alpha)
        nxt = np.zeros((n, n))
        for m in range(n):
            # integrand g(tau) k_j(tau, s_m) for tau on nodes m..n-1
            k = n - m
            psi = gv[m:] * factors[-1][m:, m]
            chi = (W[:k, :k] @ psi) * scale[:k]
            chi[0] = diag * psi[0]
            nxt[m:, m] = chi * ra
        factors.append(nxt)

    return KernelStack(alpha, grid, gv, tuple(factors))


# }}}


# {{{ resolvent series


def start_exponents(alpha: float, count: int = 3) -> tuple[float, ...]:
    """Non-integer powers ``k alpha < 2`` in the expansion of the solution
    near ``a``; powers within 0.05 of an integer are dropped to keep the
    starting weights well conditioned."""
    out = []
    for k in range(1, count + 1):
        gamma_k = k * alpha
        if gamma_k < 2.0 and abs(gamma_k - round(gamma_k)) > 0.05:
            out.append(gamma_k)
    return tuple(out)


def solve_resolvent(
    p: LeftCaputoIVP,
    grid: UniformGrid,
    tol: float = 1.0e-10,
    j_max: int = 60,
) -> SeriesSolution:
    r"""Solve the homogeneous problem through the resolvent series

    .. math::

        x(t) = x_a \left(1 + \int_a^t R(t, s) ds\right),
        \qquad R = \sum_{j \ge 1} k_j.

    The integrated kernels satisfy
    :math:`\int_a^t k_{j+1}(t, s) ds = I^\alpha_{a+}[g \int_a^\cdot k_j(\cdot, s) ds](t)`,
    so each term costs one fractional integral instead of a full kernel.
    The series is truncated once the sup norm of a term drops below *tol*.
    Starting weights for the powers ``(t - a)^(k alpha)`` of the solution keep
    the quadrature second order near ``a``.

    :raises SeriesNotConvergedError: if the last term at *j_max* exceeds *tol*.
    """
    if p.forcing is not None:
        raise ValueError("solve_resolvent handles the homogeneous problem only")
    if grid.a != p.a:
        raise ValueError(f"grid starts at {grid.a}, problem at {p.a}")

    g = sample(p.coefficient, grid.t)
    exponents = start_exponents(p.alpha)
    shape = np.ones(grid.n)
    term = GridFunction(grid, np.ones(grid.n))
    last = math.inf
    j = 0
    while j < j_max:
        term = left_frac_integral(term * g, p.alpha, start_exponents=exponents)
        j += 1
        shape += term.values
        last = float(np.max(np.abs(term.values)))
        if last < tol:
            break

    if last >= tol:
        raise SeriesNotConvergedError(
            f"resolvent series not converged after {j} terms (last term {last:.3e})",
            j,
            last,
        )

    return SeriesSolution(GridFunction(grid, p.x_a * shape), j, last, tol)


# }}}


# {{{ right-sided series


def solve_right_series(
    p: RightRLIVP,
    grid: UniformGrid,
    tol: float = 1.0e-10,
    k_max: int = 60,
) -> SeriesSolution:
    r"""Sum :math:`x = \frac{x_b}{\Gamma(\alpha)} \sum_k T^k[(b - s)^{\alpha - 1}]`
    with :math:`T[\phi] = I^\alpha_{b-}[g \phi]`.

    The result is flagged singular at ``b`` with order ``alpha - 1``; its
    ``b`` node holds the coefficient ``x_b / Gamma(alpha)``.

    :raises SeriesNotConvergedError: if the last term at *k_max* exceeds *tol*.
    """
    if grid.b != p.b:
        raise ValueError(f"grid ends at {grid.b}, problem at {p.b}")

    alpha = p.alpha
    sigma = alpha - 1.0
    ra = rgamma(alpha)
    scale = p.x_b * ra

    # reflected coordinates: distance to b becomes distance to the left end
    dist = _distance(grid, "a")
    g = sample(p.coefficient, grid.t)[::-1]
    with np.errstate(divide="ignore"):
        weight = np.where(dist > 0, dist**sigma, 0.0)

    exponents = start_exponents(alpha)
    psi = np.ones(grid.n)
    total = psi.copy()
    last = math.inf
    k = 0
    while k < k_max:
        chi = _left_integral_factor(g * psi, alpha, sigma, exponents)
        psi = dist**alpha * chi * ra
        k += 1
        total += psi
        last = float(np.max(np.abs(scale * weight[1:] * psi[1:])))
        if last < tol:
            break

    if last >= tol:
        raise SeriesNotConvergedError(
            f"right series not converged after {k} terms (last term {last:.3e})",
            k,
            last,
        )

    x = GridFunction.from_factor(grid, scale * total[::-1], sigma, side="b")
    return SeriesSolution(x, k, last, tol)


# }}}


# {{{ implicit product trapezoid


@dataclass(frozen=True)
class LogScaledSolution:
    """Solution stored as ``mantissa * exp(log_scale)`` node by node.

    Used when the solution of a linear problem leaves the double range; signs
    are carried by the mantissa exactly.
    """

    grid: UniformGrid
    mantissa: np.ndarray
    log_scale: np.ndarray

    @property
    def values(self) -> np.ndarray:
        """Node values, saturating to ``+-inf`` outside the double range."""
        with np.errstate(over="ignore", invalid="ignore"):
            return np.where(self.mantissa == 0.0, 0.0, self.mantissa * np.exp(self.log_scale))

    @property
    def log_abs(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(np.abs(self.mantissa)) + self.log_scale


_RESCALE_AT = 1.0e100


def _implicit_trapezoid(
    p: LeftCaputoIVP, grid: UniformGrid, rescale: bool
) -> tuple[np.ndarray, np.ndarray]:
    if grid.a != p.a:
        raise ValueError(f"grid starts at {grid.a}, problem at {p.a}")
    if rescale and p.forcing is not None:
        raise ValueError("rescaling applies to the homogeneous problem only")

    n = grid.n
    g = sample(p.coefficient, grid.t)
    f = sample(p.forcing, grid.t)
    A = _trapezoid_weights(n, p.alpha)
    c = grid.h**p.alpha * rgamma(p.alpha + 2.0)

    x = np.empty(n)
    scale = np.zeros(n)
    F = np.empty(n)
    x_a = float(p.x_a)
    shift = 0.0
    x[0] = x_a
    F[0] = g[0] * x[0] + f[0]
    for i in range(1, n):
        den = 1.0 - c * A[i, i] * g[i]
        if den <= 0.0:
            raise SolverError(f"implicit step {i} is singular (c g = {c * g[i]:.3e})")
        xi = (x_a + c * (A[i, :i] @ F[:i] + A[i, i] * f[i])) / den
        if rescale and abs(xi) > _RESCALE_AT:
            # homogeneous and linear: the whole history may be rescaled
            k = math.log(abs(xi))
            F[:i] *= math.exp(-k)
            x_a *= math.exp(-k)
            xi *= math.exp(-k)
            shift += k
        x[i] = xi
        scale[i] = shift
        F[i] = g[i] * xi + f[i]
        if not math.isfinite(F[i]):
            raise SolverError(f"non-finite values at step {i}")

    return x, scale


def solve_implicit_trapezoid(p: LeftCaputoIVP, grid: UniformGrid) -> GridFunction:
    r"""Linear problem :math:`{}^C D^\alpha_{a+} x = g(t) x + f(t)` by the implicit
    product trapezoid rule.

    The corrector equation of the Adams scheme is linear in the new value and
    is solved exactly at every step, so no step size restriction applies for
    ``g <= 0``. This is the method of choice for stiff (large negative)
    coefficients, where the explicit predictor of :func:`predictor_corrector`
    is unstable.

    :raises SolverError: if a step is singular (``c g_i >= 1``) or overflows.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        x, _ = _implicit_trapezoid(p, grid, rescale=False)
    return GridFunction(grid, x)


def solve_implicit_trapezoid_scaled(p: LeftCaputoIVP, grid: UniformGrid) -> LogScaledSolution:
    """Homogeneous variant of :func:`solve_implicit_trapezoid` that rescales its
    history whenever the solution exceeds ``1e100``, so growth beyond the
    double range is represented exactly up to rounding."""
    x, scale = _implicit_trapezoid(p, grid, rescale=True)
    return LogScaledSolution(grid, x, scale)


# }}}


# {{{ predictor-corrector


def _adams(
    alpha: float,
    x0: np.ndarray,
    rhs: Callable[[int, np.ndarray], np.ndarray],
    n: int,
    h: float,
) -> np.ndarray:
    """Fractional Adams scheme for a batch of trajectories.

    *x0* has shape ``(batch,)``; ``rhs(i, x)`` evaluates the right-hand side
    at node ``i`` for a batch of states. Returns an array ``(n, batch)``.
    """
    A = _trapezoid_weights(n, alpha)
    c_corr = h**alpha / (alpha * (alpha + 1.0)) * rgamma(alpha)
    k = np.arange(n + 1, dtype=float) ** alpha
    # product rectangle: b_{m} = (m + 1)^alpha - m^alpha for m = k - j
    b_pred = np.diff(k)
    c_pred = h**alpha * rgamma(alpha + 1.0)

    x = np.empty((n, x0.size))
    F = np.empty((n, x0.size))
    x[0] = x0
    F[0] = rhs(0, x0)
    for i in range(1, n):
        hist_pred = b_pred[:i][::-1] @ F[:i]
        xp = x0 + c_pred * hist_pred
        hist_corr = A[i, :i] @ F[:i]
        x[i] = x0 + c_corr * (hist_corr + rhs(i, xp))
        F[i] = rhs(i, x[i])
        if not np.all(np.isfinite(F[i])):
            raise SolverError(f"non-finite values at step {i}")

    return x


def predictor_corrector(
    alpha: float,
    a: float,
    x_a: float,
    f: Callable[[float, float], float],
    grid: UniformGrid,
) -> GridFunction:
    r"""Solve :math:`{}^C D^\alpha_{a+} x = f(t, x)`, :math:`x(a) = x_a` with the
    fractional Adams predictor (product rectangle) and one corrector pass
    (product trapezoid) per step.

    :raises SolverError: on NaN or overflow during stepping.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1]: {alpha}")
    if grid.a != a:
        raise ValueError(f"grid starts at {grid.a}, problem at {a}")

    t = grid.t

    def rhs(i: int, x: np.ndarray) -> np.ndarray:
        return np.array([f(float(t[i]), float(xi)) for xi in x], dtype=float)

    with np.errstate(over="raise", invalid="raise"):
        try:
            x = _adams(alpha, np.array([float(x_a)]), rhs, grid.n, grid.h)
        except FloatingPointError as exc:
            raise SolverError(str(exc)) from exc

    return GridFunction(grid, x[:, 0])


# }}}
