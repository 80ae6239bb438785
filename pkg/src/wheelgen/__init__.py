"""Generative wheel design: reference-guided SIMP topology optimization coupled with a
boundary-equilibrium GAN, autoencoder novelty scoring and Pareto extraction."""

__version__ = "0.1.0"
