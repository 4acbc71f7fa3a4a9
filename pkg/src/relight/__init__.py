"""Low-light image enhancement with contrastive illumination representations."""

__version__ = "0.1.0"
