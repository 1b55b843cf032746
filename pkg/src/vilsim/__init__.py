"""Networked traffic co-simulation with chance-constrained MPC vehicles."""
__version__ = "0.1.0"
