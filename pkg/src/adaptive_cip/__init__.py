"""Adaptive finite element reconstruction of dielectric permittivity from
time-domain boundary measurements of electric waves."""

__version__ = "0.1.0"
