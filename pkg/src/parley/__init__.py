"""Tournament engine and analysis pipeline for autonomous agent negotiations."""

__version__ = "0.1.0"
