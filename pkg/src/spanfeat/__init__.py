"""Multi-intent span tagging and per-span intent-feature classification."""

__version__ = "0.1.0"
