"""Latent patient-state discovery, validation and timecourse reporting for longitudinal mobile health data."""

__version__ = "0.1.0"
