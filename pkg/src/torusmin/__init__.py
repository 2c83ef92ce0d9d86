"""Numerical laboratory for minimal geodesics and entropy on Riemannian 2-tori."""

__version__ = "0.1.0"
