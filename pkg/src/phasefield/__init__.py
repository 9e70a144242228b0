"""Phase-field cell problems in random and quasi-periodic media."""

__version__ = "0.1.0"

__all__ = ["__version__"]
