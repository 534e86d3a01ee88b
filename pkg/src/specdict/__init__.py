"""Operator dictionary learning on the manifold of spectral decompositions."""
