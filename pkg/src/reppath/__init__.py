"""Request execution path reconstruction and automaton-based anomaly detection."""

__version__ = "0.1.0"
