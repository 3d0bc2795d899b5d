"""Capacity-region bounds for the K-user dispersive nonlinear WDM interference channel."""

__version__ = "0.1.0"
