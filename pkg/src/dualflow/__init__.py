"""Dual variational formulation of quadratic PDE systems and a staged
base-state gradient-flow solver for the noise-free Nash system."""

__version__ = "0.1.0"
