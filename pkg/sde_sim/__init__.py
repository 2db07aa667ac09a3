"""Benchmark fast/slow SDEs, Euler-Maruyama integration and analytic oracles."""
