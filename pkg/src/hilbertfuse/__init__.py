"""Continuous Bayesian occupancy mapping with decentralized map fusion.

Core pieces: squared-exponential feature projection onto inducing points
(`features`), mean-field variational training and probabilistic occupancy
queries (`model`), conflation-based posterior merging with increment
exchange (`fusion`), a log-odds grid baseline (`gridmap`), evaluation
metrics (`metrics`), data ingestion and a synthetic world (`ingest`), and a
multi-agent simulator (`simulate`).
"""

from .features import FeatureBasis, Point2, make_grid_basis, project, project_many
from .fusion import (
    FilterPolicy,
    GaussianParam,
    MapIncrement,
    Role,
    conflate,
    fuse_maps,
    get_increment,
    map_increment,
    sequential_fusion,
)
from .model import (
    LabeledSample,
    TrainConfig,
    WeightPosterior,
    deserialize,
    em_update,
    lambda_fn,
    new_map,
    predict,
    predict_many,
    serialize,
    serialized_size,
)

__all__ = [
    "FeatureBasis",
    "FilterPolicy",
    "GaussianParam",
    "LabeledSample",
    "MapIncrement",
    "Point2",
    "Role",
    "TrainConfig",
    "WeightPosterior",
    "conflate",
    "deserialize",
    "em_update",
    "fuse_maps",
    "get_increment",
    "lambda_fn",
    "make_grid_basis",
    "map_increment",
    "new_map",
    "predict",
    "predict_many",
    "project",
    "project_many",
    "sequential_fusion",
    "serialize",
    "serialized_size",
]

__version__ = "0.1.0"
