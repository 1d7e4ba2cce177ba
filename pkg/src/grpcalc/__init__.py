"""Generalized Riemann problems for hyperbolic balance laws.

Shock-fitted reference-space solver with first-order sensitivities.
"""

__version__ = "0.1.0"
