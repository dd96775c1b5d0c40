"""Bayesian open-population mark-recapture with two unlinked natural marks."""
__version__ = "0.1.0"
