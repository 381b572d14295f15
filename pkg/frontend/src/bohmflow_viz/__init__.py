"""Figure rendering for bohmflow run directories."""

__version__ = "0.1.0"
