"""Capsule-chain geometry: distances, grid index, clustering, crossing detection."""
from .core import (
    CapsuleChain,
    ClusterLabeling,
    PackedChains,
    SpatialIndex,
    annulus_regions,
    build_index,
    chains_touch,
    choose_cell_size,
    cluster,
    crossing,
    crossing_indicator,
    default_tol,
    segment_distance,
    spanning_cluster_count,
)

__all__ = [
    "CapsuleChain",
    "ClusterLabeling",
    "PackedChains",
    "SpatialIndex",
    "annulus_regions",
    "build_index",
    "chains_touch",
    "choose_cell_size",
    "cluster",
    "crossing",
    "crossing_indicator",
    "default_tol",
    "segment_distance",
    "spanning_cluster_count",
]
