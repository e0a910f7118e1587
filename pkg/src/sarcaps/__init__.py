"""Capsule-network and CNN SAR ship classification with GAN class rebalancing."""

__version__ = "0.1.0"
