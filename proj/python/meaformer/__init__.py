"""Click-guided lesion measurement: synthetic phantoms, training and the two-step pipeline."""

from ._core import (
    CheckpointError,
    DataError,
    DatasetError,
    GeometryError,
    MeasurementError,
    Measurer,
    TrainingDiverged,
    classify_response,
    generate_dataset,
    generate_phantom,
    loi_from_box,
    read_dataset,
    recist_from_mask,
    train,
)

__all__ = [
    "CheckpointError",
    "DataError",
    "DatasetError",
    "GeometryError",
    "MeasurementError",
    "Measurer",
    "TrainingDiverged",
    "classify_response",
    "generate_dataset",
    "generate_phantom",
    "loi_from_box",
    "read_dataset",
    "recist_from_mask",
    "train",
]
