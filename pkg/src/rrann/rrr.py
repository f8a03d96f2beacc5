"""Per-cluster low-rank regression models: training and scoring.

For a cluster with point block C and a training block X, the model fits the
inner-product map x -> x^T C^T by a rank-r factor pair (A, B). The fit has a
closed form: take the top-r right singular vectors V_r of the target matrix
Y = X C^T, then A = C^T V_r and B = V_r^T. When queries are projected into an
s-dimensional space first, the projected inputs replace X on the left and
A = pinv(X_proj) Y V_r, so predictions remain estimates of the
original-space inner products.

Clusters smaller than the rank are stored exactly (single factor C^T, no B)
instead of compressed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cluster import EUCLIDEAN as CLUSTER_EUCLIDEAN
from .cluster import SPHERICAL, _dissimilarities, route
from .errors import BuildError, ParameterError, ShapeError
from .linalg import as_matrix, pseudoinverse, randomized_svd
from .quantize import QuantizedMatrix, quantize_matrix_columns, quantized_vecmat

F32 = np.float32

METRIC_EUCLIDEAN = "euclidean"
METRIC_IP = "ip"
METRIC_COSINE = "cosine"
METRICS = (METRIC_EUCLIDEAN, METRIC_IP, METRIC_COSINE)

TRAIN_CORPUS = "corpus"
TRAIN_QUERY_SAMPLE = "query_sample"
LOCAL_ROUTED = "routed"
LOCAL_CLUSTER_ONLY = "cluster_only"


def cluster_metric(metric: str) -> str:
    """Map an index metric onto the clustering/routing dissimilarity."""
    if metric == METRIC_EUCLIDEAN:
        return CLUSTER_EUCLIDEAN
    if metric in (METRIC_IP, METRIC_COSINE):
        return SPHERICAL
    raise ParameterError(f"unknown metric: {metric!r}")


@dataclass(frozen=True)
class RrrConfig:
    rank: int = 32
    reduced_dim: int | None = 64
    train_source: str = TRAIN_CORPUS
    local_train: str = LOCAL_ROUTED
    train_w: int = 2
    quantize: bool = True
    seed: int = 0

    def validate(self, d: int) -> None:
        if self.rank < 1:
            raise ParameterError(f"rank must be >= 1, got {self.rank}")
        if self.reduced_dim is not None:
            if self.reduced_dim < 1:
                raise ParameterError(f"reduced_dim must be >= 1, got {self.reduced_dim}")
            if self.rank > self.reduced_dim:
                raise ParameterError(f"rank {self.rank} exceeds reduced_dim {self.reduced_dim}")
        elif self.rank > d:
            raise ParameterError(f"rank {self.rank} exceeds dimension {d}")
        if self.train_w < 1:
            raise ParameterError(f"train_w must be >= 1, got {self.train_w}")
        if self.train_source not in (TRAIN_CORPUS, TRAIN_QUERY_SAMPLE):
            raise ParameterError(f"unknown train_source: {self.train_source!r}")
        if self.local_train not in (LOCAL_ROUTED, LOCAL_CLUSTER_ONLY):
            raise ParameterError(f"unknown local_train: {self.local_train!r}")


@dataclass
class ClusterModel:
    """One cluster's scorer: ids, factor pair (or a single exact factor), norms.

    ``a`` maps a projected query to the r-dimensional intermediate and ``b``
    maps that to per-point estimates. Exact models keep only ``a`` = C^T and
    score in a single product.
    """

    point_ids: np.ndarray  # int64 corpus indices
    a: QuantizedMatrix | np.ndarray
    b: QuantizedMatrix | np.ndarray | None
    norm_terms: np.ndarray | None = None  # float32 ||c_j||^2, euclidean only
    exact: bool = False

    @property
    def n_points(self) -> int:
        return self.point_ids.shape[0]


def _factor_matvec(x: np.ndarray, factor, qx=None) -> np.ndarray:
    if isinstance(factor, QuantizedMatrix):
        return quantized_vecmat(x, factor, qx=qx)
    return x @ factor


def exact_model_from_block(
    query_space_block,
    quantize: bool,
    point_ids: np.ndarray,
    norm_terms: np.ndarray | None,
) -> ClusterModel:
    """Exact scorer over a cluster block given in query (projected) space."""
    a = np.ascontiguousarray(as_matrix(query_space_block, "cluster block").T)
    if quantize:
        a = quantize_matrix_columns(a, mixed_precision=True)
    return ClusterModel(point_ids=point_ids, a=a, b=None, norm_terms=norm_terms, exact=True)


def train_cluster(
    cluster_points,
    train_points,
    cfg: RrrConfig,
    rotation_v: np.ndarray | None = None,
    projected_train: np.ndarray | None = None,
    projected_cluster: np.ndarray | None = None,
    point_ids: np.ndarray | None = None,
    norm_terms: np.ndarray | None = None,
    svd_seed: int = 0,
) -> ClusterModel:
    """Fit one cluster's rank-r model.

    ``cluster_points`` and ``train_points`` are in the original dimension (the
    targets Y = X C^T are exact inner products). With dimensionality reduction
    the caller also passes the projected training and cluster blocks.
    ``rotation_v`` (r x r orthogonal) is folded into V_r so the intermediate
    vector arrives pre-rotated for re-quantization.
    """
    c = as_matrix(cluster_points, "cluster_points")
    x = as_matrix(train_points, "train_points")
    if c.shape[0] == 0:
        raise BuildError("train_cluster: empty cluster")
    if x.shape[0] == 0:
        raise BuildError("train_cluster: empty training block")
    if x.shape[1] != c.shape[1]:
        raise ShapeError("train_cluster: train/cluster dimension mismatch")
    m_l, n_l = c.shape[0], x.shape[0]
    r = cfg.rank
    if cfg.reduced_dim is not None:
        if projected_train is None or projected_cluster is None:
            raise ParameterError("train_cluster: reduction enabled but projected blocks missing")
        projected_train = as_matrix(projected_train, "projected_train")
        projected_cluster = as_matrix(projected_cluster, "projected_cluster")
        if projected_train.shape[0] != n_l or projected_cluster.shape[0] != m_l:
            raise ShapeError("train_cluster: projected block row counts mismatch")
    if point_ids is None:
        point_ids = np.arange(m_l, dtype=np.int64)

    if min(m_l, n_l) < r:
        block = projected_cluster if projected_cluster is not None else c
        return exact_model_from_block(block, cfg.quantize, point_ids, norm_terms)

    y = x.astype(np.float64) @ c.astype(np.float64).T
    # 4 subspace iterations: 2 leaves V_r visibly rotated when the spectrum
    # has near-ties around index r, which shows up as scoring error
    v_r = randomized_svd(y.astype(F32), rank=r, power_iters=4, seed=svd_seed).v  # m_l x r
    if rotation_v is not None:
        v_r = (v_r.astype(np.float64) @ rotation_v.astype(np.float64)).astype(F32)
    if projected_train is not None:
        a = pseudoinverse(projected_train).astype(np.float64) @ y @ v_r.astype(np.float64)
        a = a.astype(F32)
    else:
        a = (c.astype(np.float64).T @ v_r.astype(np.float64)).astype(F32)
    b = np.ascontiguousarray(v_r.T)
    if cfg.quantize:
        return ClusterModel(
            point_ids=point_ids,
            a=quantize_matrix_columns(a, mixed_precision=True),
            b=quantize_matrix_columns(b, mixed_precision=True),
            norm_terms=norm_terms,
        )
    return ClusterModel(point_ids=point_ids, a=a, b=b, norm_terms=norm_terms)


def score_cluster(query_projected, model: ClusterModel, metric: str, query_quantized=None) -> np.ndarray:
    """Per-point score estimates for one cluster.

    Euclidean returns -2 * yhat + ||c||^2 (lower is better); ip and cosine
    return yhat (higher is better). The query must already be projected and
    rotated to match the model's factors. ``query_quantized`` lets a caller
    scoring many clusters quantize the query once; it must equal
    quantize_vector(query_projected, mixed_precision=True).
    """
    if metric not in METRICS:
        raise ParameterError(f"unknown metric: {metric!r}")
    x = np.ascontiguousarray(query_projected, dtype=F32).ravel()
    expect = model.a.rows if isinstance(model.a, QuantizedMatrix) else model.a.shape[0]
    if x.size != expect:
        raise ShapeError(f"score_cluster: query length {x.size} != factor rows {expect}")
    inter = _factor_matvec(x, model.a, qx=query_quantized)
    yhat = inter if model.b is None else _factor_matvec(inter.astype(F32), model.b)
    yhat = yhat.astype(F32)
    if metric == METRIC_EUCLIDEAN:
        if model.norm_terms is None:
            raise ShapeError("score_cluster: euclidean scoring needs norm terms")
        return (-2.0 * yhat + model.norm_terms).astype(F32)
    return yhat


def select_training_rows(global_train, centroids, l: int, train_w: int, metric: str) -> np.ndarray:
    """Rows of the training set whose top-train_w nearest centroids include l."""
    x = as_matrix(global_train, "global_train")
    c = as_matrix(centroids, "centroids")
    if train_w > c.shape[0]:
        raise ParameterError(f"train_w {train_w} exceeds cluster count {c.shape[0]}")
    cm = cluster_metric(metric) if metric in METRICS else metric
    hits = [i for i in range(x.shape[0]) if l in route(x[i], c, train_w, cm)]
    return np.array(hits, dtype=np.int64)


def training_rows_for_all_clusters(
    global_train, centroids, train_w: int, metric: str
) -> list[np.ndarray]:
    """J_l for every cluster in one pass over the training set."""
    x = as_matrix(global_train, "global_train")
    c = as_matrix(centroids, "centroids")
    L = c.shape[0]
    if train_w > L:
        raise ParameterError(f"train_w {train_w} exceeds cluster count {L}")
    cm = cluster_metric(metric) if metric in METRICS else metric
    diss = _dissimilarities(x, c, cm)
    order = np.argsort(diss, axis=1, kind="stable")[:, :train_w]
    buckets: list[list[int]] = [[] for _ in range(L)]
    for i in range(x.shape[0]):
        for l in order[i]:
            buckets[int(l)].append(i)
    return [np.array(b, dtype=np.int64) for b in buckets]
