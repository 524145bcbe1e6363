"""Signed-disparity stereo matching for satellite image pairs: models, losses, training and evaluation."""

__version__ = "0.1.0"
