"""Truncated variational EM for isotropic GMMs and k-means."""
