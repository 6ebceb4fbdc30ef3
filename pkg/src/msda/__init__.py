"""Multi-source domain adaptation for speaker verification."""

__version__ = "0.1.0"
