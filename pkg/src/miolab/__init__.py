"""Binary-contrastive (MIO) and InfoNCE losses with exact gradients,
mutual-information and false-negative geometry oracles, and a desk-scale
self-supervised training and linear-probe pipeline."""

__version__ = "0.1.0"
