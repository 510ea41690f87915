"""Latent-space inference toolkit.

Compresses high-dimensional data with volume-regularized autoencoders,
learns conditional distributions in the compressed spaces with a
Sinkhorn-divergence-trained generator, and ships the two benchmark data
generators (a three-mode ODE system and a two-phase flow reservoir) plus
k-NN entropy diagnostics for posterior uncertainty.
"""

__version__ = "0.1.0"
