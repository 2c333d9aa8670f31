"""Local volatility toolkit for Cheyette-type interest-rate models.

Subpackages cover Bachelier smile analytics, implied-variance surfaces,
the explicit local-volatility formulas, inverse-Gaussian expansion
checks, a deterministic Monte Carlo engine for the 1F/2F Cheyette SDEs,
the two-factor Gaussian effective mean reversion, and calibration to
swaption smiles.  The ``cheylv`` console script drives batch runs.
"""

__version__ = "0.1.0"
