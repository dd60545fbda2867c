"""gfx-lab: simulation and verification of spatial growth-fragmentations."""

__version__ = "1.0.0"
