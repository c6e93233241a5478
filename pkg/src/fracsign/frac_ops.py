r"""Left and right fractional integrals and derivatives on uniform grids.

All integrals use product integration: the smooth factor of the integrand
is interpolated linearly on each panel and multiplied against the exact
kernel :math:`(t - s)^{\alpha - 1}`. A :class:`GridFunction` may carry an
algebraic endpoint singularity ``dist^sigma``; it is then stored as
``values = dist^sigma * psi`` with ``psi`` smooth, and the weight
``dist^sigma (t - s)^(alpha - 1)`` is integrated exactly on every panel
through incomplete Beta functions.

Right-sided operators are the left-sided ones conjugated by the reflection
``t -> a + b - t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import special

from fracsign.special_fn import rgamma

MAX_NODES = 8193


class OrderError(ValueError):
    """Raised for fractional orders outside of the supported range."""


class SingularityError(ValueError):
    """Raised when an endpoint singularity is not integrable."""


# {{{ grids


@dataclass(frozen=True)
class UniformGrid:
    """Uniform nodes ``t_i = a + i h`` on ``[a, b]`` with ``n`` nodes."""

    a: float
    b: float
    n: int

    def __post_init__(self) -> None:
        if not self.a < self.b:
            raise ValueError(f"expected a < b: got [{self.a}, {self.b}]")
        if self.n < 2:
            raise ValueError(f"need at least 2 nodes: n = {self.n}")
        if self.n > MAX_NODES:
            raise ValueError(f"at most {MAX_NODES} nodes supported: n = {self.n}")

    @property
    def h(self) -> float:
        return (self.b - self.a) / (self.n - 1)

    @property
    def t(self) -> np.ndarray:
        return self.a + self.h * np.arange(self.n)

    def index(self, t: float) -> int:
        """Index of the node closest to *t*."""
        i = int(round((t - self.a) / self.h))
        if not 0 <= i < self.n:
            raise ValueError(f"{t} is outside of [{self.a}, {self.b}]")
        return i


@dataclass(frozen=True)
class GridFunction:
    """Samples of a real function on a :class:`UniformGrid`.

    When *sigma* is nonzero the function behaves like ``c * dist^sigma`` at the
    endpoint named by *side* (``"a"`` or ``"b"``); the sample stored at that
    node is the coefficient ``c`` and not the (infinite) function value.
    """

    grid: UniformGrid
    values: np.ndarray
    sigma: float = 0.0
    side: str | None = None

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

        if values.shape != (self.grid.n,):
            raise ValueError(
                f"expected {self.grid.n} values, got shape {values.shape}"
            )
        if self.sigma != 0.0:
            if self.side not in ("a", "b"):
                raise ValueError(f"singular side must be 'a' or 'b': {self.side!r}")
            if not -1.0 < self.sigma < 0.0:
                raise SingularityError(
                    f"singularity order must be in (-1, 0): {self.sigma}"
                )
        elif self.side is not None:
            object.__setattr__(self, "side", None)

    @classmethod
    def from_callable(
        cls, grid: UniformGrid, f: Callable[[np.ndarray], np.ndarray]
    ) -> GridFunction:
        return cls(grid, np.broadcast_to(np.asarray(f(grid.t), dtype=float), grid.n))

    @classmethod
    def from_factor(
        cls, grid: UniformGrid, psi: np.ndarray, sigma: float, side: str = "b"
    ) -> GridFunction:
        """Build ``dist^sigma * psi`` from its smooth factor *psi*."""
        psi = np.asarray(psi, dtype=float)
        if sigma == 0.0:
            return cls(grid, psi)

        dist = _distance(grid, side)
        values = np.empty_like(psi)
        inner = dist > 0
        values[inner] = dist[inner] ** sigma * psi[inner]
        values[~inner] = psi[~inner]
        return cls(grid, values, sigma=sigma, side=side)

    @property
    def t(self) -> np.ndarray:
        return self.grid.t

    @property
    def singular_index(self) -> int | None:
        if self.side is None:
            return None
        return 0 if self.side == "a" else self.grid.n - 1

    @property
    def regular_mask(self) -> np.ndarray:
        """Boolean mask of the nodes holding actual function values."""
        mask = np.ones(self.grid.n, dtype=bool)
        if self.singular_index is not None:
            mask[self.singular_index] = False
        return mask

    def factor(self) -> np.ndarray:
        """Smooth factor ``psi`` with ``values = dist^sigma * psi``."""
        if self.side is None:
            return np.array(self.values)

        dist = _distance(self.grid, self.side)
        psi = np.array(self.values)
        inner = dist > 0
        psi[inner] = self.values[inner] / dist[inner] ** self.sigma
        return psi

    def reflect(self) -> GridFunction:
        """The function ``t -> f(a + b - t)`` on the same grid."""
        side = {"a": "b", "b": "a", None: None}[self.side]
        return replace(self, values=self.values[::-1].copy(), side=side)

    def __mul__(self, other: GridFunction | np.ndarray | float) -> GridFunction:
        if isinstance(other, GridFunction):
            if other.side is not None and self.side is not None:
                raise SingularityError("cannot multiply two singular grid functions")
            if other.side is not None:
                return other * self
            other = other.values
        # the singular node holds a coefficient, which scales the same way
        return replace(self, values=self.values * other)

    __rmul__ = __mul__

    def __neg__(self) -> GridFunction:
        return replace(self, values=-self.values)


def _distance(grid: UniformGrid, side: str) -> np.ndarray:
    # exact integer multiples of h so that distances are reflection symmetric
    i = np.arange(grid.n, dtype=float)
    return grid.h * (i if side == "a" else i[::-1])


# }}}


# {{{ weights


@lru_cache(maxsize=16)
def _trapezoid_weights(n: int, alpha: float) -> np.ndarray:
    r"""Product-trapezoid weights for :math:`\int_0^{t_i} (t_i - s)^{\alpha-1} f(s) ds`.

    Returns the lower triangular matrix ``A`` such that the integral equals
    ``h^alpha / Gamma(alpha + 2) * (A @ f)[i]``.
    """
    k = np.arange(n, dtype=float)
    p = k ** (alpha + 1.0)

    # a_{i,j} = (i-j+1)^{a+1} - 2 (i-j)^{a+1} + (i-j-1)^{a+1} for 0 < j < i
    mid = np.zeros(n)
    mid[1:-1] = p[2:] - 2.0 * p[1:-1] + p[:-2]

    ii, jj = np.indices((n, n))
    diff = ii - jj
    A = np.where(diff > 0, mid[np.clip(diff, 0, n - 1)], 0.0)
    A[diff == 0] = 1.0

    i = k[1:]
    A[1:, 0] = (i - 1.0) ** (alpha + 1.0) - (i - 1.0 - alpha) * i**alpha
    A[0, 0] = 0.0

    A.setflags(write=False)
    return A


@lru_cache(maxsize=8)
def _singular_weights(n: int, alpha: float, sigma: float) -> np.ndarray:
    r"""Weights for :math:`\int_0^{t_i} (t_i - s)^{\alpha-1} s^\sigma \psi(s) ds`.

    With the substitution ``s = t_i u`` the integral becomes
    ``t_i^(alpha + sigma) * (W @ psi)[i]`` where ``W`` integrates the Beta-type
    weight ``u^sigma (1 - u)^(alpha - 1)`` against the linear interpolant of
    ``psi`` on the panels ``[j/i, (j+1)/i]``.
    """
    p, q = sigma + 1.0, alpha
    beta0 = special.beta(p, q)
    beta1 = special.beta(p + 1.0, q)

    W = np.zeros((n, n))
    for i in range(1, n):
        u = np.arange(i + 1, dtype=float) / i
        m0 = beta0 * np.diff(special.betainc(p, q, u))
        m1 = beta1 * np.diff(special.betainc(p + 1.0, q, u))

        # psi(u) = psi_j (u_{j+1} - u) i + psi_{j+1} (u - u_j) i
        W[i, :i] += (u[1:] * m0 - m1) * i
        W[i, 1 : i + 1] += (m1 - u[:-1] * m0) * i

    W.setflags(write=False)
    return W


def _check_order(alpha: float, lo: float = 0.0, hi: float = 1.0) -> float:
    alpha = float(alpha)
    if not lo <= alpha <= hi:
        raise OrderError(f"order must be in [{lo}, {hi}]: {alpha}")
    return alpha


def _factor_weights(n: int, alpha: float, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """Matrix ``W`` and the exact value ``chi_0`` factor of the left integral.

    ``Gamma(alpha) I^alpha[s^sigma psi](t_i) = t_i^(alpha + sigma) (W @ psi)[i]``.
    """
    if sigma == 0.0:
        A = _trapezoid_weights(n, alpha)
        scale = np.zeros(n)
        scale[1:] = np.arange(1, n, dtype=float) ** (-alpha) / (alpha * (alpha + 1.0))
        return A, scale
    return _singular_weights(n, alpha, sigma), np.ones(n)


@lru_cache(maxsize=16)
def _starting_weights(
    n: int, alpha: float, sigma: float, exponents: tuple[float, ...]
) -> np.ndarray:
    """Corrections on the first ``len(exponents) + 2`` nodes.

    The corrected rule stays exact for constant and linear factors and becomes
    exact for the factors ``s^gamma`` with ``gamma`` in *exponents*.
    """
    W, scale = _factor_weights(n, alpha, sigma)
    m = len(exponents) + 2
    if m > n:
        raise ValueError(f"too few nodes for {len(exponents)} starting exponents")

    # index units: the rule and the exact value scale identically with h
    j = np.arange(n, dtype=float)
    i = j[1:]
    errors = np.zeros((n, m))
    for k, gamma_k in enumerate(exponents):
        basis = j**gamma_k
        exact = i**gamma_k * special.beta(sigma + gamma_k + 1.0, alpha)
        errors[1:, k + 2] = exact - (W @ basis)[1:] * scale[1:]

    powers = (0.0, 1.0, *exponents)
    V = np.array([[jj**p if (jj > 0 or p == 0) else 0.0 for jj in range(m)] for p in powers])
    C = np.zeros((n, n))
    C[:, :m] = np.linalg.solve(V, errors.T).T

    C.setflags(write=False)
    return C


def _left_integral_factor(
    psi: np.ndarray,
    alpha: float,
    sigma: float,
    exponents: tuple[float, ...] = (),
) -> np.ndarray:
    r"""Evaluate ``t^-(alpha + sigma) * Gamma(alpha) * I^alpha[s^sigma psi](t)``.

    The returned array is the smooth factor of the integral (up to the
    ``1/Gamma(alpha)`` normalization) and is finite at ``t = 0``.
    """
    n = psi.size
    W, scale = _factor_weights(n, alpha, sigma)
    out = (W @ psi) * scale
    if exponents:
        out += _starting_weights(n, alpha, sigma, exponents) @ psi

    out[0] = special.beta(sigma + 1.0, alpha) * psi[0]
    return out


# }}}


# {{{ integrals


def left_frac_integral(
    f: GridFunction, alpha: float, *, start_exponents: tuple[float, ...] = ()
) -> GridFunction:
    r"""Left Riemann-Liouville integral :math:`I^\alpha_{a+}[f]` on the grid of *f*.

    A singularity of *f* at ``a`` of order ``sigma`` yields a result behaving
    like ``dist^(sigma + alpha)``, which is flagged again if still singular.

    :arg start_exponents: known non-integer powers ``gamma`` in the expansion
        ``psi(s) ~ sum c_k (s - a)^gamma_k`` of the smooth factor near ``a``.
        Starting weights make the rule exact on them, which restores the
        convergence order lost to such terms.
    :raises OrderError: unless ``0 <= alpha <= 1``.
    :raises SingularityError: if *f* is singular at ``b``.
    """
    alpha = _check_order(alpha)
    if alpha == 0.0:
        return f
    if f.side == "b":
        raise SingularityError(
            "left integrals of functions singular at the right endpoint are "
            "not finite at b"
        )

    grid = f.grid
    sigma = f.sigma
    # the plain rule is already exact for s^0 and s^1
    exponents = tuple(sorted({float(g) for g in start_exponents} - {0.0, 1.0}))
    if any(g <= -1.0 - sigma for g in exponents):
        raise SingularityError(f"starting exponents must exceed {-1.0 - sigma}: {exponents}")
    chi = _left_integral_factor(f.factor(), alpha, sigma, exponents)
    order = alpha + sigma
    dist = _distance(grid, "a")

    if order < 0.0:
        return GridFunction.from_factor(grid, chi * rgamma(alpha), order, side="a")

    values = dist**order * chi * rgamma(alpha)
    return GridFunction(grid, values)


def right_frac_integral(
    f: GridFunction, alpha: float, *, start_exponents: tuple[float, ...] = ()
) -> GridFunction:
    r"""Right Riemann-Liouville integral :math:`I^\alpha_{b-}[f]` on the grid of *f*.

    Computed as the left integral of the reflection ``t -> f(a + b - t)``.
    """
    alpha = _check_order(alpha)
    if alpha == 0.0:
        return f

    return left_frac_integral(
        f.reflect(), alpha, start_exponents=start_exponents
    ).reflect()


def right_frac_integral_at_b(f: GridFunction, alpha: float) -> float:
    r"""Value of :math:`I^{\alpha}_{b-}[f](b)` from the singular panel closed form.

    For ``f ~ c (b - t)^sigma`` this is ``c Gamma(sigma + 1)`` when
    ``sigma + alpha == 0``, zero when ``sigma + alpha > 0`` and infinite
    otherwise.
    """
    alpha = _check_order(alpha)
    sigma = f.sigma if f.side == "b" else 0.0
    order = sigma + alpha
    c = float(f.values[-1])
    if c == 0.0 or order > 1.0e-14:
        return 0.0 if alpha > 0 or f.side is None else c * math.inf
    if order < -1.0e-14:
        return math.copysign(math.inf, c)

    # alpha = -sigma: int_t^b (s - t)^(alpha-1) (b - s)^sigma ds = B(sigma + 1, alpha)
    return c * special.beta(sigma + 1.0, alpha) * rgamma(alpha)


# }}}


# {{{ derivatives


def caputo_left_derivative(f: GridFunction, alpha: float) -> GridFunction:
    r"""L1 approximation of the left Caputo derivative :math:`{}^C D^\alpha_{a+}[f]`.

    For ``alpha = 1`` this is a second order finite difference. The value at
    ``a`` itself is copied from the first interior node.
    """
    alpha = _check_order(alpha, 0.0, 1.0)
    if alpha == 0.0:
        raise OrderError("Caputo derivative requires 0 < alpha <= 1")
    if f.side is not None:
        raise SingularityError("Caputo derivatives require a continuous function")

    grid = f.grid
    if alpha == 1.0:
        return GridFunction(grid, np.gradient(f.values, grid.h, edge_order=2))

    n = grid.n
    df = np.diff(f.values)
    k = np.arange(n, dtype=float)
    b = (k[1:]) ** (1.0 - alpha) - k[:-1] ** (1.0 - alpha)

    out = np.empty(n)
    for i in range(1, n):
        # sum_{j < i} b_{i-j-1} (f_{j+1} - f_j)
        out[i] = np.dot(b[:i][::-1], df[:i])
    out[1:] *= grid.h ** (-alpha) / math.gamma(2.0 - alpha)
    out[0] = out[1]

    return GridFunction(grid, out)


def rl_right_derivative(f: GridFunction, alpha: float) -> GridFunction:
    r"""Right Riemann-Liouville derivative
    :math:`D^\alpha_{b-}[f] = -\frac{d}{dt} I^{1-\alpha}_{b-}[f]`.

    The derivative is reported on ``[a, b)``; the value at ``b`` is NaN.
    """
    alpha = _check_order(alpha, 0.0, 1.0)
    if alpha == 0.0:
        raise OrderError("RL derivative requires 0 < alpha <= 1")

    grid = f.grid
    J = right_frac_integral(f, 1.0 - alpha)
    if J.side is not None:
        raise SingularityError(
            "I^(1-alpha)[f] is unbounded at b; its derivative is not defined there"
        )

    out = -np.gradient(J.values, grid.h, edge_order=2)
    out[-1] = np.nan
    return GridFunction(grid, out)


# }}}
