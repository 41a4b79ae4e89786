"""Slot world models with exact rotation-scaling latent dynamics.

The package learns object-slot representations of short videos and models
their evolution with log-linear rotation-scaling operators, giving exact
composition, inversion, and fractional powers of time steps. It ships the
training stack (autodiff engine, environments, two-phase trainer), evaluation
metrics, a command line, and an interactive HTTP session service.
"""

__version__ = "0.1.0"
