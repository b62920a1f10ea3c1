"""Approximately convex optimization via annealed hit-and-run, a dense
quantum-walk simulator, and a stochastic convex bandit harness."""

__version__ = "0.1.0"
