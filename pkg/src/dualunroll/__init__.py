"""Coupled primal/dual unrolled networks for constrained optimization.

Two learned networks approximate the saddle point of a problem family's
Lagrangian: the primal network maps a multiplier to a Lagrangian minimizer
across unrolled layers, and the dual network walks multiplier iterates
toward the dual optimum, querying the primal network at every layer.
Training imposes per-layer descent (primal) and ascent (dual) constraints
through learned constraint weights, with classical dual ascent as oracle
and baseline.
"""

__version__ = "0.1.0"
