"""Umbrella windows, histogram pooling, WHAM and the coupled pipeline."""
