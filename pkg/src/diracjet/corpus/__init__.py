"""Bundled Lagrangians and matching initial data."""

from __future__ import annotations

from importlib import resources

import numpy as np

from ..numerics import FieldState, Grid
from ..parser import LagrangianSpec, parse

BUILTINS = ("cubic-nls", "log-nls", "kdv", "fourth-order-nls", "fourth-order-nls-direct")


def text(name: str) -> str:
    if name not in BUILTINS:
        raise KeyError(f"unknown builtin system {name!r}")
    return resources.files(__package__).joinpath(f"{name}.lag").read_text(encoding="utf-8")


def load(name: str) -> LagrangianSpec:
    return parse(text(name))


def _periodic(profile, grid: Grid, center: float, images: int = 3) -> np.ndarray:
    """Sum of periodic images, so the profile is smooth across the boundary."""
    return sum(profile(grid.x - center - m * grid.length) for m in range(-images, images + 1))


def _sech(x):
    return 1.0 / np.cosh(x)


def _sech2(x):
    return 1.0 / np.cosh(x) ** 2


def initial_state(name: str, grid: Grid) -> FieldState:
    """Smooth initial data for the evolved variables of a builtin system.

    The Schroedinger systems start with zero phase and evolve the phase
    through its gradient, so ``theta_x`` is supplied.  The cubic equation
    starts from its sech soliton; the logarithmic and fourth-order equations
    start from a smooth amplitude bounded away from zero.  KdV evolves
    ``phi_x`` and starts from the speed-4 soliton ``2 sech^2``.
    """
    mid = grid.length / 2
    zero = np.zeros(grid.n)
    if name == "cubic-nls":
        return FieldState({"phi": _periodic(_sech, grid, mid), "theta_x": zero})
    if name in ("log-nls", "fourth-order-nls-direct"):
        return FieldState({"phi": 1.0 + 0.25 * np.cos(2 * np.pi * grid.x / grid.length), "theta_x": zero})
    if name == "kdv":
        return FieldState({"phi_x": 2 * _periodic(_sech2, grid, mid / 2)})
    raise KeyError(f"no initial data for {name!r}")
