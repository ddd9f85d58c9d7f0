"""Exact and asymptotic dynamics of collective spin quantum batteries."""

__version__ = "0.1.0"

from .model import CouplingTable, PairSpec, SystemSpec, TimeGrid  # noqa: E402

__all__ = ["CouplingTable", "PairSpec", "SystemSpec", "TimeGrid", "__version__"]
