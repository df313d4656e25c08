"""Chained-equation multiple imputation for tables larger than memory."""

from ._core import (
    GroundTruth,
    ImputeResult,
    OocmiceError,
    ParamEstimate,
    PooledResult,
    Table,
    generate,
    impute,
    pool,
    pooled_diagnostics,
    read_csv,
    rmse,
    score,
)

__all__ = [
    "GroundTruth",
    "ImputeResult",
    "OocmiceError",
    "ParamEstimate",
    "PooledResult",
    "Table",
    "generate",
    "impute",
    "pool",
    "pooled_diagnostics",
    "read_csv",
    "rmse",
    "score",
]
