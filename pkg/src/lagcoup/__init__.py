"""Dimension-generic Lagrangian solid-fluid coupling simulator.

Weakly compressible SPH fluids and FEM hyperelastic solids advanced by
optimization-based implicit time integration, coupled through barrier
contact, with contact-proxy time-splitting schemes and custom linear
solvers.
"""

__version__ = "0.1.0"
