"""Stochastic pump scheduling for PV-assisted water networks."""

from ._core import BACKEND

__version__ = "0.1.0"


def backend() -> str:
    """Name of the active cost-kernel backend ("cython" or "numpy")."""
    return BACKEND
