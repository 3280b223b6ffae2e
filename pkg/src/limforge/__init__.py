"""limforge: extract, generate, and evaluate research-limitation statements."""

__version__ = "0.1.0"
