"""Anticipation and forecasting network on synthetic activity videos."""

from .config import RunConfig, load_config, paper_shape_config
from .datagen import ActivityGrammar, Video, generate_dataset, generate_grammar
from .ism import MemoryBank

__all__ = [
    "ActivityGrammar",
    "MemoryBank",
    "RunConfig",
    "Video",
    "generate_dataset",
    "generate_grammar",
    "load_config",
    "paper_shape_config",
]
__version__ = "0.1.0"
