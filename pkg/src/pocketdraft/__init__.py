"""Pocket-conditioned molecule generation on an unlabelled-graph affinity
surrogate, with an in-repo docking stand-in and a mechanized checker for
what unlabelled-graph message passing can and cannot distinguish."""

__version__ = "0.1.0"
