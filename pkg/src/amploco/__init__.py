"""Adversarial-motion-prior reinforcement learning for a planar walking and flying robot."""

__version__ = "0.1.0"
