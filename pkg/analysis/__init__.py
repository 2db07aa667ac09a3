"""Density estimates, L1 metric and convergence studies."""
