"""Conditional mixing diagnostics for Langevin and Gibbs samplers."""
