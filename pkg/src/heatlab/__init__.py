"""heatlab: weighted dbar heat kernels on truncated grids."""

__version__ = "0.1.0"
