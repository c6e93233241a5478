"""Gamma and two-parameter Mittag-Leffler functions on real arguments.

The Mittag-Leffler function is evaluated by one of three routes:

* the defining power series for ``z >= -1`` (and for every ``z`` when
  ``alpha > 1``), summed with :func:`math.fsum` and log-scaled terms;
* for ``z < -1`` and ``0 < alpha < 1``, the real integral representation of
  Gorenflo, Loutchko & Luchko (valid for ``beta < 1 + alpha``), used for
  ``beta <= 1`` and extended to larger ``beta`` by the downward recurrence
  in ``beta``;
* for ``z < -1`` and ``0.99 < alpha < 1``, where the real integrand above
  develops a near pole, inversion of the Laplace transform
  ``s^(alpha - beta) / (s^alpha - z)`` on a parabolic Hankel contour;
* for ``z < -1`` and ``alpha == 1``, the Euler-type integral
  ``E_{1,b}(z) = 1/Gamma(b - 1) int_0^1 (1 - s)^(b - 2) exp(z s) ds``.

Accuracy: absolute error below ``1e-10`` for ``|z| <= 10``. Up to ``Z_MAX``
the integral routes keep roughly ``1e-12`` absolute accuracy (the contour
route about ``1e-13``); the series route
for positive ``z`` is accurate to a few ulps relative to the result.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

Z_MAX = 50.0
"""Default bound on ``|z|`` accepted by :func:`mittag_leffler`."""

MAX_TERMS = 20000
"""Term budget of the series route."""

_LOG_MAX = math.log(np.finfo(float).max)


class PoleError(ValueError):
    """Raised when the Gamma function is evaluated at a nonpositive integer."""


class ConvergenceError(ArithmeticError):
    """Raised when a series exhausts its term budget."""


def _is_pole(x: float) -> bool:
    return x <= 0 and x == math.floor(x)


def gamma(x: float) -> float:
    """Gamma function of a real argument.

    :raises PoleError: if *x* is a nonpositive integer.
    :raises OverflowError: if the result exceeds the double range.
    """
    x = float(x)
    if _is_pole(x):
        raise PoleError(f"Gamma has a pole at {x}")
    return math.gamma(x)


def rgamma(x: float) -> float:
    """Reciprocal Gamma function; zero at the poles of Gamma."""
    x = float(x)
    if _is_pole(x):
        return 0.0
    if x > 171.0:
        return math.exp(-math.lgamma(x))
    return 1.0 / math.gamma(x)


@dataclass(frozen=True)
class MLQuery:
    """Arguments of a single Mittag-Leffler evaluation ``E_{alpha,beta}(z)``."""

    alpha: float
    beta: float
    z: float
    z_max: float = Z_MAX

    def __post_init__(self) -> None:
        if not self.alpha > 0 or not math.isfinite(self.alpha):
            raise ValueError(f"alpha must be positive: {self.alpha}")
        if not math.isfinite(self.beta):
            raise ValueError(f"beta must be finite: {self.beta}")
        if not math.isfinite(self.z) or abs(self.z) > self.z_max:
            raise ValueError(f"|z| must not exceed {self.z_max}: {self.z}")

    def evaluate(self) -> float:
        return mittag_leffler(self.z, self.alpha, self.beta, z_max=self.z_max)


def _ml_series(z: float, alpha: float, beta: float) -> float:
    logz = math.log(abs(z))
    negative = z < 0
    terms = []
    partial = 0.0
    for k in range(MAX_TERMS):
        arg = alpha * k + beta
        if arg > 0:
            logmag = k * logz - math.lgamma(arg)
            if logmag > _LOG_MAX:
                raise OverflowError(
                    f"E_{{{alpha},{beta}}}({z}) exceeds the double range"
                )
            term = math.exp(logmag)
        else:
            term = abs(z) ** k * rgamma(arg)
        if negative and k % 2 == 1:
            term = -term
        terms.append(term)
        partial += term
        if k > 5 and abs(term) < 1.0e-16 * abs(partial):
            return math.fsum(terms)

    raise ConvergenceError(
        f"series for E_{{{alpha},{beta}}}({z}) did not converge in {MAX_TERMS} terms"
    )


def _ml_negative_integral(z: float, alpha: float, beta: float) -> float:
    # requires z < 0, 0 < alpha < 1, beta <= 1
    s1 = math.sin(math.pi * (1.0 - beta))
    s2 = math.sin(math.pi * (1.0 - beta + alpha))
    c = math.cos(math.pi * alpha)
    inv_alpha = 1.0 / alpha

    def smooth(r: float) -> float:
        # kernel without the r^((1 - beta)/alpha) factor
        return (
            math.exp(-(r**inv_alpha))
            * (r * s1 - z * s2)
            / (r * r - 2.0 * r * z * c + z * z)
        )

    def kernel(r: float) -> float:
        return r ** ((1.0 - beta) * inv_alpha) * smooth(r)

    opts = {"epsabs": 1.0e-14, "epsrel": 1.0e-13, "limit": 400}
    head, _ = integrate.quad(
        smooth, 0.0, 1.0, weight="alg", wvar=((1.0 - beta) * inv_alpha, 0.0), **opts
    )

    # exp(-r^(1/alpha)) is negligible past r_max
    r_max = max(2.0, 800.0**alpha)
    points = [p for p in (abs(z), abs(z * c)) if 1.0 < p < r_max]
    tail, _ = integrate.quad(kernel, 1.0, r_max, points=points or None, **opts)

    return (head + tail) / (math.pi * alpha)


def _ml_exp_integral(z: float, beta: float) -> float:
    # alpha == 1
    if beta == 1.0:
        return math.exp(z)
    if beta < 1.0:
        return rgamma(beta) + z * _ml_exp_integral(z, beta + 1.0)

    value, _ = integrate.quad(
        lambda s: math.exp(z * s),
        0.0,
        1.0,
        weight="alg",
        wvar=(0.0, beta - 2.0),
        epsabs=1.0e-15,
        epsrel=1.0e-13,
    )
    return value * rgamma(beta - 1.0)


_CONTOUR_NODES = 24
_CONTOUR_ALPHA = 0.99


def _ml_contour(z: float, alpha: float, beta: float) -> float:
    # parabola s(u) = mu (1 + iu)^2 with trapezoid nodes u_k = k h, which
    # converges geometrically when all singularities lie on the negative axis
    n = _CONTOUR_NODES
    h = 3.0 / n
    mu = math.pi * n / 12.0
    u = h * np.arange(-n, n + 1)
    s = mu * (1.0 + 1j * u) ** 2
    integrand = np.exp(s) * s ** (alpha - beta) / (s**alpha - z) * (1.0 + 1j * u)
    return float(np.sum(integrand).real) * h * mu / math.pi


def _ml_negative(z: float, alpha: float, beta: float) -> float:
    if alpha == 1.0:
        return _ml_exp_integral(z, beta)
    if alpha > _CONTOUR_ALPHA:
        return _ml_contour(z, alpha, beta)

    # E_{a,b}(z) = (E_{a,b-a}(z) - 1/Gamma(b-a)) / z; shifting beta into
    # (1 - alpha, 1] keeps the integrand bounded at the origin
    offsets = []
    b = beta
    while b > 1.0:
        b -= alpha
        offsets.append(b)

    value = _ml_negative_integral(z, alpha, b)
    for b in reversed(offsets):
        value = (value - rgamma(b)) / z

    return value


def mittag_leffler(
    z: float, alpha: float, beta: float = 1.0, *, z_max: float = Z_MAX
) -> float:
    r"""Evaluate :math:`E_{\alpha,\beta}(z) = \sum_k z^k / \Gamma(\alpha k + \beta)`.

    :arg z: real argument with ``|z| <= z_max``.
    :arg alpha: positive order.
    :arg beta: real second parameter.
    :raises ValueError: for arguments outside the domain.
    :raises OverflowError: if the value exceeds the double range.
    :raises ConvergenceError: if the series term budget is exhausted.
    """
    z = float(z)
    alpha = float(alpha)
    beta = float(beta)
    if not alpha > 0 or not math.isfinite(alpha):
        raise ValueError(f"alpha must be positive: {alpha}")
    if not math.isfinite(beta):
        raise ValueError(f"beta must be finite: {beta}")
    if not math.isfinite(z) or abs(z) > z_max:
        raise ValueError(f"|z| must not exceed {z_max}: {z}")

    if z == 0.0:
        return rgamma(beta)

    if z < -1.0 and alpha <= 1.0:
        return _ml_negative(z, alpha, beta)

    return _ml_series(z, alpha, beta)


def mittag_leffler_array(
    z: np.ndarray, alpha: float, beta: float = 1.0, *, z_max: float = Z_MAX
) -> np.ndarray:
    """Elementwise :func:`mittag_leffler` over an array of arguments."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    for idx, zi in np.ndenumerate(z):
        out[idx] = mittag_leffler(zi, alpha, beta, z_max=z_max)

    return out
