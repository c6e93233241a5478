"""Numerical verification of sign results for linear fractional equations
and of optimality conditions for fractional Herglotz problems."""

from __future__ import annotations

__version__ = "0.1.0"

from fracsign.frac_ops import GridFunction, UniformGrid
from fracsign.special_fn import gamma, mittag_leffler

__all__ = ["GridFunction", "UniformGrid", "__version__", "gamma", "mittag_leffler"]
