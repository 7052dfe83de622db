"""SE(3)xSE(3) bi-equivariant point-cloud assembly toolkit."""

__version__ = "0.1.0"
