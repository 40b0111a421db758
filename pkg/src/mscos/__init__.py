"""Bivariate multiscale spatial models with change-of-support prediction."""
from .errors import (ConfigError, DisjointnessError, InconsistentOverlapError, InvalidArgument,
                     NumericalError)
from .supports import (ArealSupport, OverlapTable, PartitionMatrix, assemble_block_partition,
                       build_grid_support, build_partition_matrix, diag_ppt)
from .basis import (BasisSet, CarStructure, CovarianceParams, exp_covariance, mcar_precision,
                    moran_basis, morans_operator, select_knots)
from .model import ChainState, Dataset, Hyperparams, ModelSpec, make_spec
from .sampler import McmcConfig, PosteriorDraws, run_chain, run_chains
from .predict import PredictionResult, cos_predict
from .evaluate import MetricReport, gelman_rubin, rmse, waic

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DisjointnessError",
    "InconsistentOverlapError",
    "InvalidArgument",
    "NumericalError",
    "ArealSupport",
    "OverlapTable",
    "PartitionMatrix",
    "assemble_block_partition",
    "build_grid_support",
    "build_partition_matrix",
    "diag_ppt",
    "BasisSet",
    "CarStructure",
    "CovarianceParams",
    "exp_covariance",
    "mcar_precision",
    "moran_basis",
    "morans_operator",
    "select_knots",
    "ChainState",
    "Dataset",
    "Hyperparams",
    "ModelSpec",
    "make_spec",
    "McmcConfig",
    "PosteriorDraws",
    "run_chain",
    "run_chains",
    "PredictionResult",
    "cos_predict",
    "MetricReport",
    "gelman_rubin",
    "rmse",
    "waic",
]
