"""Numerical laboratory for soliton stability in generalized KdV equations.

The package builds ground states of u_t + u_xxx + (u^p)_x = 0 on a periodic
box, evolves them pseudo-spectrally, decomposes trajectories into a modulated
soliton plus a constrained remainder, and tracks the weighted-mass and virial
functionals whose growth separates the critical (p = 5) instability from the
subcritical (p = 3) stability.
"""

from gkdv_lab.grid import Field, GridSpec

__all__ = ["Field", "GridSpec"]
__version__ = "0.1.0"
