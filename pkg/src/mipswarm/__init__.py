"""Simulation, theory and analysis toolkit for collision-induced aggregation in self-propelled robot swarms."""

__version__ = "0.1.0"
