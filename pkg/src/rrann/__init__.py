"""rrann: clustering-based ANN search with low-rank regression scoring."""

from .errors import (
    BuildError,
    DataError,
    FormatError,
    ParameterError,
    RrannError,
    ShapeError,
)
from .index import (
    IndexConfig,
    QueryParams,
    QueryResult,
    RrrIndex,
    build,
    deserialize,
    query,
    query_batch,
    serialize,
)
from .rrr import RrrConfig

__all__ = [
    "BuildError",
    "DataError",
    "FormatError",
    "IndexConfig",
    "ParameterError",
    "QueryParams",
    "QueryResult",
    "RrannError",
    "RrrConfig",
    "RrrIndex",
    "ShapeError",
    "build",
    "deserialize",
    "query",
    "query_batch",
    "serialize",
]

__version__ = "0.1.0"
