"""Packet transport on hybrid networks: a lattice backbone of base stations
serving mobile users."""

__version__ = "0.1.0"
