"""factorport: latent-factor covariance estimation and minimum-variance backtesting."""

__version__ = "0.1.0"
