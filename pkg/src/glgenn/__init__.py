"""GLGENN: generalized Lipschitz group equivariant layers over Cl(p, q, r)."""

__version__ = "0.1.0"
