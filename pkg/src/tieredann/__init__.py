"""Streaming approximate nearest-neighbor search over a tiered graph index."""
from .cache import CostModel
from .config import IndexConfig, load_config
from .index import TieredIndex
from .kernels import BACKEND

__all__ = ["BACKEND", "CostModel", "IndexConfig", "TieredIndex", "load_config"]
__version__ = "0.1.0"
