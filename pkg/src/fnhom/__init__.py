"""Periodic homogenization workbench for fully nonlinear elliptic equations."""

__version__ = "0.1.0"
