"""Multitask transfer learning for pathogen-human protein interaction prediction."""

__version__ = "0.1.0"
