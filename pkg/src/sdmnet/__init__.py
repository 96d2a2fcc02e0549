"""Self-DenseMobileNet lung-nodule classification toolkit.

Self-ONN layers on a small numpy autodiff engine, radiograph enhancement,
stratified folds, classical learners with a stacked meta forest, ScoreCAM
saliency and weighted metrics.
"""

from .model import ModelConfig, SelfDenseMobileNet, build_model, predict_proba
from .checkpoint import checkpoint_load, checkpoint_save

__version__ = "0.1.0"

__all__ = ["ModelConfig", "SelfDenseMobileNet", "build_model", "predict_proba",
           "checkpoint_load", "checkpoint_save", "__version__"]
