"""Coverage-path-planning simulation engine and benchmark suite."""

__version__ = "0.1.0"
