"""Set-prediction keyphrase generation with keyword-guided calibration,
multi-level document portraits, and downstream classification analysis."""

__version__ = "0.1.0"

from .corpus import MultiLevelDocument, Vocabulary, tokenize
from .model import Model, ModelConfig
from .training import TsmtConfig, tsmt_train

__all__ = [
    "Model",
    "ModelConfig",
    "MultiLevelDocument",
    "TsmtConfig",
    "Vocabulary",
    "tokenize",
    "tsmt_train",
    "__version__",
]
