"""Random Cantor measures, ball-growth profiles, kernel sums and restriction
exponents on the sphere."""

__version__ = "0.1.0"
