"""Personalized affective memory: adversarial autoencoder prior plus per-person GWR memories."""

__version__ = "0.1.0"
