"""Virtual element solvers for a coupled bending-flow plate model."""

__version__ = "0.1.0"
