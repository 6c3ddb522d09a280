"""Multi-agent limitation generation and coverage evaluation."""

__version__ = "0.1.0"
