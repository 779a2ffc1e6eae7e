"""Hydrogen sorption modeling toolkit for clays, shales, and coals.

Classical isotherm fitting with evolutionary optimization, sorption
thermodynamics, engineered physicochemical features, a physics-
constrained neural regressor with ensemble uncertainty, and a metrics
suite — all deterministic per seed, with a built-in synthetic
ground-truth generator for end-to-end verification.
"""

__version__ = "0.1.0"

from . import errors  # noqa: F401
