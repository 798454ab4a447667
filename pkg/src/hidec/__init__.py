"""Hierarchical text classification by recursive sub-hierarchy decoding."""

__version__ = "0.1.0"

from .codec import SubHierSequence, SubHierarchy, build_hierarchy_mask, deserialize, encode_labels, serialize
from .estimator import HiDECClassifier
from .metrics import EvalReport, evaluate
from .model import HiDECNetwork, ModelConfig
from .taxonomy import Special, Taxonomy, load_taxonomy
from .training import TrainConfig

__all__ = [
    "EvalReport", "HiDECClassifier", "HiDECNetwork", "ModelConfig", "Special", "SubHierSequence",
    "SubHierarchy", "Taxonomy", "TrainConfig", "build_hierarchy_mask", "deserialize", "encode_labels",
    "evaluate", "load_taxonomy", "serialize",
]
