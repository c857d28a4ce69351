"""Multi-relation product embeddings with attention aggregation and ball-geometry categories."""

__version__ = "0.1.0"
