"""Light-cone feature selection with local projected quantum kernels."""

__version__ = "0.1.0"
