"""Learning low-disclosure proxies for balanced data collection."""

__version__ = "0.1.0"
