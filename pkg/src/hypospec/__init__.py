"""Numerical spectral geometry of hypoelliptic operators on filtered manifolds.

Graded nilpotent Lie algebras and left-invariant operators, discretized
sub-Laplacians on nilmanifolds, Weyl and heat-trace asymptotics, spectral
zeta functions, and the heat kernel of the (2,3,5) Carnot group.
"""

__version__ = "0.1.0"
