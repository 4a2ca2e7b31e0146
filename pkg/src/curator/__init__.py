"""Judge-directed dynamic training-set curation over generator APIs."""

__version__ = "0.1.0"

from .buckets import BucketSpec, build_buckets, sample_bucket, adapt_to_backend
from .dataset import DynamicDataset, Lineage, Prompt, Sample
from .director import CheckingEpochReport, Director, DirectorConfig, best_of_k
from .judge import JudgeVerdict, discriminate, expand, mutate, evaluate_alignment
from .simulation import GeneratorProfile, SimWorld, SyntheticLearner, quality_gap
from .store import ImageHandle

__all__ = [
    "BucketSpec", "build_buckets", "sample_bucket", "adapt_to_backend",
    "DynamicDataset", "Lineage", "Prompt", "Sample",
    "CheckingEpochReport", "Director", "DirectorConfig", "best_of_k",
    "JudgeVerdict", "discriminate", "expand", "mutate", "evaluate_alignment",
    "GeneratorProfile", "SimWorld", "SyntheticLearner", "quality_gap",
    "ImageHandle",
]
