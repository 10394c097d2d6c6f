"""Bimodal image/tag representations and tag-choice strategies.

Stages: hand-crafted level-1 features, stacked RBMs (level 2), a
quasi-Siamese autoencoder (level 3), then per-image or link-cycle
tag choice.
"""

__version__ = "0.1.0"
