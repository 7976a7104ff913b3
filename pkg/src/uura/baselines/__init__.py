"""Comparison schemes: separate decoding with K-means stitching, and tree-coded CURA."""

from .complexity import complexity_report, tree_search_cost
from .coupled import (TreeCodeProfile, build_profile, coupled_decode, energy_detect,
                      tree_decode, tree_encode)
from .separate import ClusterModel, kmeans_1d, uura_sd_decode

__all__ = [
    "ClusterModel",
    "TreeCodeProfile",
    "build_profile",
    "complexity_report",
    "coupled_decode",
    "energy_detect",
    "kmeans_1d",
    "tree_decode",
    "tree_encode",
    "tree_search_cost",
    "uura_sd_decode",
]
