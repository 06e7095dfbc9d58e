"""Weakly-supervised video paragraph grounding: siamese two-branch transformer,
pseudo-video composition, and a desk-scale training/evaluation harness."""

__version__ = "0.1.0"
