"""HDG+ (Lehrenfeld-Schoberl) solvers for 3D linear elasticity on tetrahedra."""

__version__ = "0.1.0"
