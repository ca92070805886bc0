"""Usage-specific survival models trained on operational snapshot data."""

__version__ = "0.1.0"

from .dataset import (  # noqa: E402
    FlatSample,
    FlatSamples,
    IndividualRecord,
    Snapshot,
    SnapshotDataset,
    flatten,
    is_homogeneously_sampled,
    load_dataset,
    save_dataset,
)
from .energy import EnergySurvivalModel, QuadratureConfig, Standardizer  # noqa: E402
from .estimator import EnergySurvivalEstimator, TrainConfig, split_by_individual, train  # noqa: E402
from .resample import GridPolicy, SamplingGrid, SnapshotResampler, homogeneous_resample, make_grid  # noqa: E402
from .simulate import SimConfig, simulate_population  # noqa: E402

__all__ = [
    "__version__",
    "EnergySurvivalEstimator",
    "EnergySurvivalModel",
    "FlatSample",
    "FlatSamples",
    "GridPolicy",
    "IndividualRecord",
    "QuadratureConfig",
    "SamplingGrid",
    "SimConfig",
    "Snapshot",
    "SnapshotDataset",
    "SnapshotResampler",
    "Standardizer",
    "TrainConfig",
    "flatten",
    "homogeneous_resample",
    "is_homogeneously_sampled",
    "load_dataset",
    "make_grid",
    "save_dataset",
    "simulate_population",
    "split_by_individual",
    "train",
]
