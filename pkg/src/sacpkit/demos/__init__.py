"""Synthetic data for examples and testing purposes."""

from sacpkit.demos.synthetic import Generator, synth_generate

__all__ = ["Generator", "synth_generate"]
