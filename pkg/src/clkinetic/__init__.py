"""Cercignani-Lampis wall scattering, backward cycles and lemma checks.

Modules
-------
geometry      convex level-set domains, exit times, kinetic distance
clkernel      C-L kernel density, sampling, reciprocity, steady remainder
lemma_oracle  numeric checks of the Gaussian/Bessel integral bounds
cycles        backward stochastic cycles and weighted cycle measures
collision     hard-sphere collision mechanics and k_rho majorant
simulator     free-molecular particle simulation with C-L walls
cli           command line front end
"""
from clkinetic.backend import NAME as BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
