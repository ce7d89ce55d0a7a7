"""Weak closure of approximating sequences for forward-backward diffusion.

Subpackages: :mod:`flux` (fluxes, Lambda, Gamma), :mod:`hulls` (convex
envelope g, Z and Sigma), :mod:`fields`, :mod:`energy`, :mod:`residual`,
:mod:`experiments` and the :mod:`cli`.
"""

from .flux import (
    FluxModel,
    IntervalSet,
    LinearFlux,
    PiecewiseLinearFlux,
    RationalBumpFlux,
    SampledFlux,
    Window,
    gamma_interval,
    hollig_flux,
    monotone_set,
)
from .hulls import convex_envelope, g_eval, residual_surface, sigma_interval, z_interval
from .fields import FieldPair, SpaceTimeGrid

__all__ = [
    "FluxModel",
    "IntervalSet",
    "LinearFlux",
    "PiecewiseLinearFlux",
    "RationalBumpFlux",
    "SampledFlux",
    "Window",
    "gamma_interval",
    "hollig_flux",
    "monotone_set",
    "convex_envelope",
    "g_eval",
    "residual_surface",
    "sigma_interval",
    "z_interval",
    "FieldPair",
    "SpaceTimeGrid",
]

__version__ = "0.1.0"
