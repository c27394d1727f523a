"""Lagrangian dual bounds for two-stage stochastic MIPs via PH and FW-PH."""

__version__ = "0.1.0"
