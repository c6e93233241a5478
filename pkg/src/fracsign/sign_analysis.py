"""Sign, separation and Bernoulli-type inequality checks on computed data.

All checks are grid based: the sign of a trajectory between nodes is not
certified. Discretization error is controlled by comparing resolutions
rather than by inflating tolerances.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from fracsign.frac_ops import GridFunction, UniformGrid
from fracsign.linear_solvers import LogScaledSolution, predictor_corrector
from fracsign.special_fn import mittag_leffler, rgamma

TOL_ZERO = 1.0e-12
TOL_POS = 0.0

POSITIVE = "positive"
NONNEGATIVE = "nonnegative"
VIOLATED = "violated"
NEGATIVE = "negative"
NONPOSITIVE = "nonpositive"


class PreconditionError(ValueError):
    """Raised when an automated precondition spot-check fails."""


@dataclass(frozen=True)
class SignReport:
    min_value: float
    argmin: float
    index: int
    verdict: str
    tol_zero: float = TOL_ZERO
    tol_pos: float = TOL_POS

    @property
    def passed(self) -> bool:
        return self.verdict != VIOLATED

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class _SaturatedValues:
    grid: UniformGrid
    values: np.ndarray

    @property
    def t(self) -> np.ndarray:
        return self.grid.t

    @property
    def regular_mask(self) -> np.ndarray:
        return np.ones(self.grid.n, dtype=bool)


def _verdict(min_value: float, tol_zero: float, tol_pos: float) -> str:
    if min_value > tol_pos:
        return POSITIVE
    if min_value < -tol_zero:
        return VIOLATED
    return NONNEGATIVE


def check_positive(
    x: GridFunction | LogScaledSolution, tol_zero: float = TOL_ZERO, tol_pos: float = TOL_POS
) -> SignReport:
    """Scan the regular nodes of *x* for its minimum and classify its sign.

    A node holding a singular coefficient (right-sided solutions at ``b``) is
    skipped. Log-scaled solutions are compared on their saturated values,
    which preserves both the sign and the minimum.
    """
    if isinstance(x, LogScaledSolution):
        x = _SaturatedValues(x.grid, x.values)
    mask = x.regular_mask
    if not mask.any():
        raise ValueError("grid function has no regular nodes")

    idx = np.flatnonzero(mask)
    values = x.values[idx]
    k = int(np.argmin(values))
    min_value = float(values[k])
    i = int(idx[k])
    return SignReport(
        min_value=min_value,
        argmin=float(x.t[i]),
        index=i,
        verdict=_verdict(min_value, tol_zero, tol_pos),
        tol_zero=tol_zero,
        tol_pos=tol_pos,
    )


def check_negative(
    x: GridFunction, tol_zero: float = TOL_ZERO, tol_pos: float = TOL_POS
) -> SignReport:
    """Negativity check, performed as :func:`check_positive` on ``-x``.

    The reported minimum is that of ``-x``.
    """
    report = check_positive(-x, tol_zero=tol_zero, tol_pos=tol_pos)
    verdict = {POSITIVE: NEGATIVE, NONNEGATIVE: NONPOSITIVE}.get(
        report.verdict, VIOLATED
    )
    return SignReport(**{**asdict(report), "verdict": verdict})


def check_separation(x1: GridFunction, x2: GridFunction, tol: float = 0.0) -> SignReport:
    """Check that two trajectories started from different values never meet.

    The report is on ``s (x1 - x2)`` where ``s`` is the sign of the initial
    gap, so a positive verdict means the gap kept its sign and stayed above
    *tol* at every node.
    """
    if x1.grid != x2.grid:
        raise ValueError("trajectories live on different grids")
    gap0 = x1.values[0] - x2.values[0]
    if gap0 == 0:
        raise ValueError("trajectories start from identical initial values")

    gap = GridFunction(x1.grid, math.copysign(1.0, gap0) * (x1.values - x2.values))
    return check_positive(gap, tol_zero=0.0, tol_pos=tol)


def check_nonlinear_positive(
    f: Callable[[float, float], float],
    x_a: float,
    alpha: float,
    grid: UniformGrid,
    tol_zero: float = TOL_ZERO,
) -> tuple[SignReport, GridFunction]:
    """Solve ``D^alpha x = f(t, x)``, ``x(a) = x_a > 0`` and check positivity.

    The requirement ``f(t, 0) = 0`` is spot-checked on every node; Lipschitz
    continuity is taken on trust.

    :raises PreconditionError: if ``f(t_i, 0) != 0`` on some node.
    """
    if not x_a > 0:
        raise PreconditionError(f"initial value must be positive: {x_a}")
    for ti in grid.t:
        value = f(float(ti), 0.0)
        if value != 0.0:
            raise PreconditionError(f"f(t, 0) = {value} != 0 at t = {ti}")

    x = predictor_corrector(alpha, grid.a, x_a, f, grid)
    return check_positive(x, tol_zero=tol_zero), x


# {{{ Bernoulli inequality


def bernoulli_margin(alpha: float, lam: float, t: float) -> float:
    r"""Margin :math:`E_\alpha(\lambda t^\alpha) - \lambda t^\alpha / \Gamma(\alpha + 1) - 1`.

    Returns ``inf`` when the Mittag-Leffler value overflows (then the
    inequality holds trivially).
    """
    if t < 0:
        raise ValueError(f"t must be nonnegative: {t}")
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1]: {alpha}")
    if t == 0:
        return 0.0

    z = lam * t**alpha
    try:
        e = mittag_leffler(z, alpha, 1.0)
    except OverflowError:
        return math.inf
    return e - z * rgamma(alpha + 1.0) - 1.0


@dataclass(frozen=True)
class BernoulliSweepReport:
    alphas: tuple[float, ...]
    lambdas: tuple[float, ...]
    ts: tuple[float, ...]
    worst_margin: float
    worst: tuple[float, float, float]
    count: int
    tol: float = 1.0e-10
    margins: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def passed(self) -> bool:
        return self.worst_margin >= -self.tol

    def to_dict(self) -> dict:
        return {
            "alphas": list(self.alphas),
            "lambdas": list(self.lambdas),
            "ts": list(self.ts),
            "worst_margin": self.worst_margin,
            "worst": {"alpha": self.worst[0], "lambda": self.worst[1], "t": self.worst[2]},
            "count": self.count,
            "tol": self.tol,
            "passed": self.passed,
        }


def sweep_range(start: float, stop: float, step: float) -> tuple[float, ...]:
    """Inclusive arithmetic range, rounded to suppress accumulation error."""
    count = int(math.floor((stop - start) / step + 1.0e-9)) + 1
    return tuple(round(start + k * step, 12) for k in range(count))


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("FRACSIGN_THREADS", "1")))
    except ValueError:
        return 1


def bernoulli_sweep(
    alphas: Sequence[float],
    lambdas: Sequence[float],
    ts: Sequence[float],
    tol: float = 1.0e-10,
    keep_margins: bool = False,
) -> BernoulliSweepReport:
    """Evaluate :func:`bernoulli_margin` on the full parameter product.

    Ties in the worst margin resolve to the first tuple in ``(alpha, lambda, t)``
    lexicographic order, so the report does not depend on threading.
    """
    alphas, lambdas, ts = tuple(alphas), tuple(lambdas), tuple(ts)

    def row(alpha: float) -> np.ndarray:
        return np.array([[bernoulli_margin(alpha, lam, t) for t in ts] for lam in lambdas])

    nthreads = _threads()
    if nthreads > 1:
        with ThreadPoolExecutor(nthreads) as pool:
            margins = np.array(list(pool.map(row, alphas)))
    else:
        margins = np.array([row(alpha) for alpha in alphas])

    flat = int(np.argmin(margins))
    i, j, k = np.unravel_index(flat, margins.shape)
    return BernoulliSweepReport(
        alphas=alphas,
        lambdas=lambdas,
        ts=ts,
        worst_margin=float(margins[i, j, k]),
        worst=(alphas[i], lambdas[j], ts[k]),
        count=int(margins.size),
        tol=tol,
        margins=margins if keep_margins else None,
    )


# }}}
