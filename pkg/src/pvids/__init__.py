"""Hidden-attacker detection for PV inverters on radial distribution feeders."""

__version__ = "0.1.0"
