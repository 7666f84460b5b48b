"""Self-supervised audio-visual correspondence learning in plain numpy."""

__version__ = "0.1.0"
