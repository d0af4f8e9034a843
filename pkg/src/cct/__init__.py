"""Compact Convolutional Transformer pipeline for binary chest X-ray classification.

A self-contained numpy implementation: autodiff engine, CCT/CVT/ViT-Lite
models, training loop, split policies, and evaluation metrics.
"""

__version__ = "0.1.0"
