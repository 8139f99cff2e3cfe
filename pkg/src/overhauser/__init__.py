"""Nuclear spin diffusion and Overhauser-field decay in a gate-defined dot."""

__version__ = "0.1.0"
