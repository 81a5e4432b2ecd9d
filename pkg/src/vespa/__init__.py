"""View-gated mixture-of-experts for multi-label attribute inference."""

__version__ = "0.1.0"
