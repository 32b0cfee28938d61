"""Unfitted (CutFEM) solver for elliptic interface problems with conservative
flux reconstruction and a posteriori error estimation."""

__version__ = "0.1.0"
