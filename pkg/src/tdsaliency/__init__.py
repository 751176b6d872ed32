"""Top-down saliency models on sparse codes, jointly trained with a
saliency-weighted image classifier."""

__version__ = "0.1.0"
