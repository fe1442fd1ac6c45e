"""Wearable-to-video knowledge distillation with fused teachers and graph-guided saliency maps."""

__version__ = "0.1.0"
