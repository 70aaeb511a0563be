"""Dataset generation, training, evaluation and link simulation."""

from .dataset import (BadMagicError, Dataset, DatasetFormatError, SamplePair, TruncatedFileError,
                      VersionMismatchError, collect, generate_dataset, read_dataset, split_by_realization,
                      write_dataset)
from .train import Adam, TrainConfig, TrainResult, TrainingDivergedError, train

__all__ = [
    "Adam", "BadMagicError", "Dataset", "DatasetFormatError", "SamplePair", "TrainConfig", "TrainResult",
    "TrainingDivergedError", "TruncatedFileError", "VersionMismatchError", "collect", "generate_dataset",
    "read_dataset", "split_by_realization", "train", "write_dataset",
]
