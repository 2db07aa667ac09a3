"""Command-line pipeline."""
