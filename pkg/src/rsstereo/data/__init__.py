from .sample import (
    DomainDescriptor,
    NormalizationStats,
    StereoSample,
    compute_stats,
    crop_sample,
    denormalize,
    iterate_crops,
    normalize,
    split_holdout,
    to_batch,
)
from .synth import SynthSpec, generate_dataset, generate_synthetic
from .io import DatasetError, StereoDataset, load_dataset, write_dataset
