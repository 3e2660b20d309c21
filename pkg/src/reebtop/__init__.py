"""Reeb and Hamiltonian dynamics on starshaped hypersurfaces in R^4, geodesic flows on
conformal tori, and numerical entropy estimates along smoothing sequences."""

__version__ = "0.1.0"
