"""Kinetic shock profiles for the non-cutoff Boltzmann equation by Hermite-Galerkin
discretization, Chapman-Enskog expansion around the Navier-Stokes shock and a
fixed-point correction."""

__version__ = "0.1.0"
