"""Epsilon-SVR with a working-likelihood estimate of the insensitive parameter."""

__version__ = "0.1.0"
