"""Sparse-pilot CSI estimation workbench for MIMO-OFDM resource grids."""

__version__ = "0.1.0"
