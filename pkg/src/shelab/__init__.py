"""Simulation and verification toolkit for stochastic heat equations on the torus.

Modules: ``spectral`` (noise measures and integrability conditions),
``grid`` (lattice, fields, heat semigroup), ``noise`` (reproducible
lattice noise), ``solver`` (exponential Euler integrators), ``invariant``
(long-run and time-reversed sampling), ``pam_chaos`` (chaos decomposition
of the linear model), ``stats`` (estimators, oracles, verdicts) and ``cli``.
"""

__version__ = "0.1.0"
