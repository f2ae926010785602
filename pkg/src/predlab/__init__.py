"""Prediction-market laboratory: order book, simulation, and belief-bound inference."""

__version__ = "0.1.0"
