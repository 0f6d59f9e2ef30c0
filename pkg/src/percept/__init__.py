"""Step discovery, reward learning, and policy training from demonstration features."""

__version__ = "0.1.0"
