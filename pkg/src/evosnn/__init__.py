"""Evolutionary, surrogate-assisted architecture search for motif-based spiking networks."""

__version__ = "0.1.0"

from .genome import Genome, GenomeConfig, VariationParams, random_genome, validate
from .motifs import DecodeConfig, decode, graph_stats
from .search import SearchConfig, run_random_baseline, run_search

__all__ = [
    "Genome",
    "GenomeConfig",
    "VariationParams",
    "random_genome",
    "validate",
    "DecodeConfig",
    "decode",
    "graph_stats",
    "SearchConfig",
    "run_search",
    "run_random_baseline",
    "__version__",
]
