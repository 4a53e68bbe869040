"""Acoustic binary screening: MFCC/BiLSTM classifier, parameter-averaged
pre-training, a small self-supervised feature extractor, and score fusion."""

__version__ = "0.1.0"
