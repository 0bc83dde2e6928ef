"""Invariant maximal monotone extensions, Lipschitz extensions and
measure-preserving couplings on finite models."""

__version__ = "0.1.0"
