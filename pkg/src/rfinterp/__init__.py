"""RF-domain interpolation of sub-sampled focused-beam ultrasound data."""

__version__ = "0.1.0"
