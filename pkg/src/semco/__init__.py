"""Semi-supervised classification with label semantics and co-training."""

__version__ = "0.1.0"
