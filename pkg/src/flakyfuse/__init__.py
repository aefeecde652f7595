"""Neuro-symbolic flaky-test classification at desk scale."""

__version__ = "0.1.0"
