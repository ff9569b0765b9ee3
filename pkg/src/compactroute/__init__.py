"""Compact oblivious routing tables: construction, simulation and evaluation."""

from .config import Config, load_config
from .graph import DemandMatrix, Distribution, Flow, Graph, edge_class, load_demands, load_graph

__version__ = "0.1.0"

__all__ = [
    "Config", "DemandMatrix", "Distribution", "Flow", "Graph", "edge_class",
    "load_config", "load_demands", "load_graph",
]
