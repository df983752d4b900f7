"""Finite-element computation of interior transmission eigenvalues."""
