"""Spatial-spectral diffusion pansharpening package."""
