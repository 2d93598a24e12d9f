"""Hand-hygiene gesture video classification with a frozen-backbone transfer model."""

__version__ = "0.1.0"
