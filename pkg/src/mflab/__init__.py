"""Simulation and verification tools for McKean-Vlasov diffusions and their particle systems."""

__version__ = "0.1.0"
