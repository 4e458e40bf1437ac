"""Retrieval-augmented multi-modal popularity prediction for micro videos."""

from .dataset import METRICS, MODALITIES, PopularityTargets, VideoRecord

__all__ = ["METRICS", "MODALITIES", "PopularityTargets", "VideoRecord"]
__version__ = "0.1.0"
