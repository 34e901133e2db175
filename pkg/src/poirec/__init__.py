"""Self-supervised graph-enhanced next-POI recommendation pipeline."""

from .config import RunConfig

__all__ = ["RunConfig"]
__version__ = "0.1.0"
