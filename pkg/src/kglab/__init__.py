"""Numerical laboratory for the quadratic Klein-Gordon soliton.

Submodules: ``numerics`` (grids, stencils, quadrature), ``spectral``
(linearized operator and its closed-form spectrum), ``darboux``
(factorization operators and their inverses), ``dynamics`` (evolution,
mode decomposition, manifold shooting), ``diagnostics`` (virial
functionals, traces, identity replay) and ``cli``.
"""

__version__ = "0.1.0"
