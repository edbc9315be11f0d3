"""Data-driven symbolic abstractions and compositional safety control for
black-box interconnected networks."""

__version__ = "0.1.0"
