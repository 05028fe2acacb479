"""Multi-touch attribution with attention-based LSTM conversion models."""

__version__ = "0.1.0"
