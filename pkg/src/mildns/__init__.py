"""Mild solutions of the incompressible Navier-Stokes equations on a periodic box.

Modules:

* ``grid``: spectral discretization, fields, trajectories, snapshots
* ``calculus``: Fourier multipliers and the Oseen kernel sampler
* ``spaces``: Lebesgue, Sobolev, caloric and Triebel norms, smallness conditions
* ``duhamel``: the bilinear Duhamel operator and its scaling probes
* ``picard``: fixed-point iteration, threshold scans
* ``reference``: integrating-factor RK4 solver and test data
"""

from .grid import Field, SpectralGrid, Trajectory, make_grid, random_field, sample_function
from .spaces import SpaceParams, admissible_params

__version__ = "0.1.0"

__all__ = [
    "Field",
    "SpectralGrid",
    "Trajectory",
    "make_grid",
    "random_field",
    "sample_function",
    "SpaceParams",
    "admissible_params",
]
