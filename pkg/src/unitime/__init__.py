"""Cross-domain time-series forecasting with instruction-conditioned causal transformers."""

from .data import Batch, DomainSpec
from .model import ModelConfig, UniTime
from .training import TrainConfig

__version__ = "0.1.0"

__all__ = ["Batch", "DomainSpec", "ModelConfig", "UniTime", "TrainConfig", "__version__"]
