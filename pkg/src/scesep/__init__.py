"""Monaural speech denoising with source-contrastive embeddings."""

__version__ = "0.1.0"
