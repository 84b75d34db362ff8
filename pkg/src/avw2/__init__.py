"""Desk-scale multichannel audio-visual contrastive pre-training toolkit."""

__version__ = "0.1.0"
