"""Mass optimization by a filtered Wasserstein gradient flow."""

__version__ = "0.1.0"
