"""MCWF simulator for atoms in a double-well optical lattice inside a ring cavity."""

__version__ = "0.1.0"
