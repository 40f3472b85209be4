"""Deterministic transport samplers (Föllmer, 1-rectified, probability-flow ODE)
with explicit regularity constants, W2 error bounds and exact optimal-transport checks.
"""

__version__ = "0.1.0"
