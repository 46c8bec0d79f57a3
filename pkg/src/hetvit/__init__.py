"""Heterogeneous-attention ViT workbench with a two-party MPC simulator."""

__version__ = "0.1.0"
