"""Device-free fall detection from WiFi channel state information."""

__version__ = "0.1.0"
