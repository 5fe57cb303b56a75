"""Similarity-guided multimodal fusion transformer at desk scale."""

__version__ = "0.1.0"
