"""Spectral-domain time series forecasting with Whittle-likelihood uncertainty.

The package combines a recurrent forecaster that runs over short-time Fourier
frames with a conditional probabilistic circuit that scores each forecast's
Fourier coefficients, yielding a calibrated log-likelihood per prediction and
a per-time-step uncertainty band.
"""

__version__ = "0.1.0"
