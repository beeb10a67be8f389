"""Bohmian trajectories for a particle tunneling between coupled waveguides.

The package has two halves: an analytic two-level model of a 1D double well
(:mod:`bohmguide.doublewell1d`) and a 2D split-operator solver with a
trajectory engine (:mod:`bohmguide.tdse2d`, :mod:`bohmguide.bohm`).
"""

__version__ = "0.1.0"

from bohmguide.corefield import ComplexField2D, Grid2D, UnitsConfig, make_grid, norm2
from bohmguide.potentials import DoubleWellParams, WaveguideGeometry

__all__ = [
    "ComplexField2D",
    "DoubleWellParams",
    "Grid2D",
    "UnitsConfig",
    "WaveguideGeometry",
    "make_grid",
    "norm2",
]
