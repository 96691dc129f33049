"""Instance-level collaborative perception under bandwidth constraints."""

__version__ = "0.1.0"
