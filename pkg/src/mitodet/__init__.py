"""Self-training point-detection pipeline for mitosis-like objects.

Train a residual patch scorer on labeled fields, mine pseudo-labeled positives
from unlabeled slides under test-time-augmentation consensus, retrain on the
combined patch banks, and evaluate with radius-matched precision/recall/F1.
"""

from .config import PipelineConfig
from .core import Annotation, Detection, HpfImage, PatchRecord, Point
from .model import ProbabilityMap, ScorerConfig

__version__ = "0.1.0"

__all__ = [
    "Annotation",
    "Detection",
    "HpfImage",
    "PatchRecord",
    "PipelineConfig",
    "Point",
    "ProbabilityMap",
    "ScorerConfig",
    "__version__",
]
