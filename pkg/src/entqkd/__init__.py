"""Entangled-photon QKD: detector simulation, post-processing and a two-peer key service."""

__version__ = "0.1.0"
