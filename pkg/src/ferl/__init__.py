"""Feature expansive reward learning: features from traces, rewards on top."""

__version__ = "0.1.0"
