"""Joint low-rank compression and core-only adaptation of linear layers."""

__version__ = "0.1.0"
