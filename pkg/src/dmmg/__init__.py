"""Adversarial viewpoint and edge augmentation for contrastive skeleton pretraining."""

__version__ = "0.1.0"
