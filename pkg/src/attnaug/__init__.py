"""Attention-guided question augmentation for a small dual-encoder retriever."""

from .errors import AttnaugError

__version__ = "0.1.0"

__all__ = ["AttnaugError", "__version__"]
