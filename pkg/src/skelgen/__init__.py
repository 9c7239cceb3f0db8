"""Skeleton-conditioned adversarial motion generation on synthetic stick figures."""

__version__ = "0.1.0"
