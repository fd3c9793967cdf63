"""Pseudo-3D scene-graph audio separation and motion-direction toolkit.

The package is organized around one pipeline: synthetic (or pre-computed)
depth / flow / detection inputs are lifted into pseudo-3D point clouds,
assembled into an RBF-weighted scene graph, used to derive per-window 3D
displacement labels, and paired with spectrogram-mask audio separation,
its losses, and BSS evaluation metrics.
"""

from . import audio, cli, geometry, losses, metrics, motion, neural, scenegraph, synth, tensorio

__all__ = [
    "audio",
    "cli",
    "geometry",
    "losses",
    "metrics",
    "motion",
    "neural",
    "scenegraph",
    "synth",
    "tensorio",
]

__version__ = "0.1.0"
