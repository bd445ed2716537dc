"""Desk-scale K-GAN (KNN feature-matching GAN) and IAN cascade laboratory."""

__version__ = "0.1.0"
