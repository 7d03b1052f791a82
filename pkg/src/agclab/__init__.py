"""Desk-scale laboratory for frequency control of a single balancing area.

Pieces: fleet / state-space assembly, exact step-and-ramp discretization,
offline inertia and damping identification, quantile forecasting of the
key parameters, and a distributionally robust MPC that issues the AGC
signal, compared against a tuned PI baseline.
"""

__version__ = "0.1.0"
