"""Numerical laboratory for compound Poisson limit laws of rare events in chaotic maps."""
