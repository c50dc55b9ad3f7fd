"""Multi-perspective HMM feature engineering for transaction fraud detection."""

__version__ = "0.1.0"
