"""Adaptive digital self-interference cancellation benchmarks for full-duplex radios."""

__version__ = "0.1.0"
