from .logger import StructuredLogger, get_logger, log_performance
from .seeding import epoch_permutation, substream

__all__ = ["StructuredLogger", "get_logger", "log_performance", "substream", "epoch_permutation"]
