"""Deformed Marchenko-Pastur law, spectral edge and extremal eigenvalues.

Sample covariance matrices ``Q = (Σ^½ X)(Σ^½ X)*`` whose population
spectrum follows a Jacobi measure: edge location in both regimes,
order-statistics predictions for the top eigenvalues, and Monte Carlo
checks of the Weibull and Gaussian limit laws.
"""

__version__ = "0.1.0"
