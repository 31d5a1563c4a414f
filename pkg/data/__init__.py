from .models import (
    AnswerVocab,
    DatasetHeader,
    Example,
    HeadType,
    RawImageFeatures,
    Split,
    TaskDataset,
)
from .repository import DatasetRepository, load_dataset, load_datasets, save_dataset
from .sampling import CandidatePoolBuilder, build_eval_candidates, downsample, downsample_curve
from .synthetic import (
    SyntheticSuiteConfig,
    SyntheticSuiteGenerator,
    generate_synthetic_suite,
)

__all__ = [
    'AnswerVocab',
    'DatasetHeader',
    'Example',
    'HeadType',
    'RawImageFeatures',
    'Split',
    'TaskDataset',
    'DatasetRepository',
    'load_dataset',
    'load_datasets',
    'save_dataset',
    'CandidatePoolBuilder',
    'build_eval_candidates',
    'downsample',
    'downsample_curve',
    'SyntheticSuiteConfig',
    'SyntheticSuiteGenerator',
    'generate_synthetic_suite',
]
