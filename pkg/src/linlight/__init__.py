"""linlight: hybrid neural-physical relighting with an exactly linear
lighting network, desk-scale and CPU-only."""

__version__ = "0.1.0"
