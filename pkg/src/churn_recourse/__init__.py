"""Churn prediction with survival forests and GAN-generated recourse."""

__version__ = "0.1.0"
