"""End-to-end index: build, query, and binary serialization.

Build pipeline: project the corpus (PCA basis from the training set, or a
plain rotation when reduction is off), cluster the projected points, then fit
one low-rank scoring model per cluster. Query pipeline: project the query,
route to the w nearest centroids, score every member point, keep the top t,
optionally re-rank those with exact dissimilarities in the original space,
and return the best k.

The on-disk format is little-endian: an 8-byte magic, a fixed header,
projection and centroid blocks, one record per cluster, an optional corpus
block, and a trailing crc32 of everything before it.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import rrr
from .cluster import balanced_kmeans, kmeans, route
from .errors import DataError, FormatError, ParameterError, ShapeError
from .linalg import random_rotation, top_eigenvectors
from .quantize import QuantizedMatrix, quantize_vector
from .rrr import (
    ClusterModel,
    RrrConfig,
    cluster_metric,
    exact_model_from_block,
    score_cluster,
    train_cluster,
    training_rows_for_all_clusters,
)

F32 = np.float32

MAGIC = b"RRRANN01"
_HEADER = struct.Struct("<BIIIIQI")

FLAG_QUANTIZED = 1 << 0
FLAG_CORPUS = 1 << 1
FLAG_BALANCED = 1 << 2
FLAG_EXACT_IVF = 1 << 3

_METRIC_CODES = {"euclidean": 0, "ip": 1, "cosine": 2}
_METRIC_NAMES = {v: k for k, v in _METRIC_CODES.items()}

SCORING_RRR = "rrr"
SCORING_EXACT_IVF = "exact_ivf"

# Appendix-style grid default kicks in only for corpora large enough that the
# smallest grid value still leaves ~39 points per cluster.
_GRID_MIN_CLUSTERS = 1024


def default_n_clusters(m: int) -> int:
    if m >= 39 * _GRID_MIN_CLUSTERS:
        return _GRID_MIN_CLUSTERS
    return max(1, min(m, int(round(np.sqrt(m)))))


@dataclass(frozen=True)
class IndexConfig:
    metric: str = "euclidean"
    n_clusters: int | None = None
    rrr: RrrConfig = field(default_factory=RrrConfig)
    scoring_mode: str = SCORING_RRR
    balanced: bool = False
    balance_delta: int = 16
    rerank: bool = True  # retain the corpus for exact re-ranking
    seed: int = 0

    def validate(self) -> None:
        if self.metric not in _METRIC_CODES:
            raise ParameterError(f"unknown metric: {self.metric!r}")
        if self.scoring_mode not in (SCORING_RRR, SCORING_EXACT_IVF):
            raise ParameterError(f"unknown scoring_mode: {self.scoring_mode!r}")
        if self.balance_delta < 1:
            raise ParameterError("balance_delta must be >= 1")


@dataclass(frozen=True)
class QueryParams:
    k: int = 10
    w: int = 1
    t: int = 100
    rerank: bool = True

    def validate(self, L: int) -> None:
        if self.k < 1:
            raise ParameterError("k must be >= 1")
        if not 1 <= self.w <= L:
            raise ParameterError(f"w={self.w} out of range [1, {L}]")
        if self.t < 1:
            raise ParameterError("t must be >= 1")
        if self.rerank and self.k > self.t:
            raise ParameterError(f"k={self.k} must be <= t={self.t} when re-ranking")


@dataclass(frozen=True)
class QueryResult:
    ids: np.ndarray  # int64, best first
    scores: np.ndarray  # float32, monotone in the metric's preference order
    truncated: bool = False  # fewer than k candidates survived routing


@dataclass
class RrrIndex:
    config: IndexConfig
    projection: np.ndarray  # d x s float32
    centroids: np.ndarray  # L x s float32
    models: list[ClusterModel]
    corpus: np.ndarray | None  # m x d float32 (normalized for cosine), if rerank
    n_points: int
    dim: int

    @property
    def n_clusters(self) -> int:
        return len(self.models)

    @property
    def reduced_dim(self) -> int:
        return self.projection.shape[1]

    def query(self, x, params: QueryParams) -> QueryResult:
        return query(self, x, params)

    def query_batch(self, queries, params: QueryParams) -> list[QueryResult]:
        return query_batch(self, queries, params)

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(serialize(self))

    @staticmethod
    def load(path) -> "RrrIndex":
        with open(path, "rb") as f:
            return deserialize(f.read())


def _check_finite(a: np.ndarray, name: str) -> np.ndarray:
    m = np.ascontiguousarray(a, dtype=F32)
    if m.ndim != 2:
        raise DataError(f"{name}: expected 2-D array")
    if not np.all(np.isfinite(m)):
        raise DataError(f"{name}: contains non-finite values")
    return m


def _normalize_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m.astype(np.float64), axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return (m / norms).astype(F32)


def _block_rotation(dim: int, seed: int) -> np.ndarray:
    """Orthogonal dim x dim matrix fixing coordinate 0 and mixing the rest."""
    rot = np.eye(dim, dtype=F32)
    if dim >= 2:
        rot[1:, 1:] = random_rotation(dim - 1, seed)
    return rot


def build(corpus, cfg: IndexConfig, train=None, workers: int = 1) -> RrrIndex:
    """Construct an index over the corpus; deterministic for a fixed config.

    ``workers`` > 1 trains cluster models in a thread pool; the result is
    identical to the serial build.
    """
    cfg.validate()
    if workers < 1:
        raise ParameterError("workers must be >= 1")
    corpus = _check_finite(corpus, "corpus")
    m, d = corpus.shape
    if m == 0:
        raise DataError("corpus is empty")
    rc = cfg.rrr
    rc.validate(d)
    if rc.reduced_dim is not None and rc.reduced_dim > d:
        raise ParameterError(f"reduced_dim {rc.reduced_dim} exceeds dimension {d}")
    L = cfg.n_clusters if cfg.n_clusters is not None else default_n_clusters(m)
    if not 1 <= L <= m:
        raise ParameterError(f"n_clusters={L} out of range [1, {m}]")

    stored = _normalize_rows(corpus) if cfg.metric == "cosine" else corpus
    if rc.train_source == rrr.TRAIN_QUERY_SAMPLE:
        if train is None:
            raise ParameterError("train_source=query_sample requires a training set")
        train_global = _check_finite(train, "train")
        if train_global.shape[1] != d:
            raise ShapeError("train dimension differs from corpus")
    else:
        train_global = stored
    if rc.local_train == rrr.LOCAL_CLUSTER_ONLY and rc.train_source != rrr.TRAIN_CORPUS:
        raise ParameterError("local_train=cluster_only requires train_source=corpus")

    # projection: PCA basis of the training set, or a bare rotation; fold in a
    # tail rotation ahead of quantization so no extra product runs per query
    if rc.reduced_dim is not None:
        s = rc.reduced_dim
        w = top_eigenvectors(train_global, s, seed=cfg.seed)
        if rc.quantize and s >= 2:
            w = (w.astype(np.float64) @ _block_rotation(s, cfg.seed + 1).astype(np.float64)).astype(F32)
    else:
        s = d
        w = random_rotation(d, seed=cfg.seed + 1) if rc.quantize else np.eye(d, dtype=F32)
    proj_corpus = (stored.astype(np.float64) @ w.astype(np.float64)).astype(F32)
    proj_train = (train_global.astype(np.float64) @ w.astype(np.float64)).astype(F32)

    cm = cluster_metric(cfg.metric)
    if cfg.balanced:
        clustering = balanced_kmeans(
            proj_corpus, L, metric=cm, delta=cfg.balance_delta, seed=cfg.seed + 2
        )
    else:
        clustering = kmeans(proj_corpus, L, metric=cm, seed=cfg.seed + 2)

    rotation_v = None
    if rc.quantize and cfg.scoring_mode == SCORING_RRR and rc.rank >= 2:
        rotation_v = _block_rotation(rc.rank, cfg.seed + 3)

    routed: list[np.ndarray] | None = None
    if cfg.scoring_mode == SCORING_RRR and rc.local_train == rrr.LOCAL_ROUTED:
        routed = training_rows_for_all_clusters(
            proj_train, clustering.centroids, min(rc.train_w, L), cfg.metric
        )

    def train_one(l: int) -> ClusterModel:
        ids = clustering.members(l)
        norms = None
        if cfg.metric == "euclidean":
            block64 = stored[ids].astype(np.float64)
            norms = (block64 * block64).sum(axis=1).astype(F32)
        if cfg.scoring_mode == SCORING_EXACT_IVF:
            return exact_model_from_block(proj_corpus[ids], rc.quantize, ids, norms)
        rows = ids if rc.local_train == rrr.LOCAL_CLUSTER_ONLY else routed[l]
        x = train_global[rows]
        px = proj_train[rows]
        if rows.shape[0] < rc.rank:
            # too few routed training points for the SVD: borrow the cluster's
            # own corpus rows so the model is still trained where possible
            x = np.vstack([x, stored[ids]]) if rows.size else stored[ids]
            px = np.vstack([px, proj_corpus[ids]]) if rows.size else proj_corpus[ids]
        if rc.reduced_dim is not None:
            return train_cluster(
                stored[ids], x, rc, rotation_v,
                projected_train=px, projected_cluster=proj_corpus[ids],
                point_ids=ids, norm_terms=norms, svd_seed=rc.seed + 17 * l,
            )
        return train_cluster(
            proj_corpus[ids], px, rc, rotation_v,
            point_ids=ids, norm_terms=norms, svd_seed=rc.seed + 17 * l,
        )

    # per-cluster training is pure, so the pool changes wall time, not output
    if workers > 1 and L > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            models = list(pool.map(train_one, range(L)))
    else:
        models = [train_one(l) for l in range(L)]

    return RrrIndex(
        config=replace(cfg, n_clusters=L),
        projection=w,
        centroids=clustering.centroids,
        models=models,
        corpus=stored if cfg.rerank else None,
        n_points=m,
        dim=d,
    )


def _exact_dissimilarity(index: RrrIndex, x: np.ndarray, ids: np.ndarray) -> np.ndarray:
    block = index.corpus[ids]
    if index.config.metric == "euclidean":
        diff = block - x[None, :]
        return (diff * diff).sum(axis=1).astype(F32)
    return (-(block @ x)).astype(F32)


def query(index: RrrIndex, x, params: QueryParams) -> QueryResult:
    """Route, score, select top-t, optionally re-rank, and return top-k."""
    params.validate(index.n_clusters)
    x = np.ascontiguousarray(x, dtype=F32).ravel()
    if x.size != index.dim:
        raise ShapeError(f"query dimension {x.size} != index dimension {index.dim}")
    if not np.all(np.isfinite(x)):
        raise DataError("query contains non-finite values")
    if params.rerank and index.corpus is None:
        raise ParameterError("index was built without the corpus; re-ranking unavailable")

    metric = index.config.metric
    xp = (x.astype(np.float64) @ index.projection.astype(np.float64)).astype(F32)
    selected = route(xp, index.centroids, params.w, cluster_metric(metric))

    # quantize the projected query once; every model shares the same layout
    qx = quantize_vector(xp, mixed_precision=True) if index.config.rrr.quantize else None
    id_chunks = []
    key_chunks = []
    for l in selected:
        model = index.models[int(l)]
        scores = score_cluster(xp, model, metric, query_quantized=qx)
        id_chunks.append(model.point_ids)
        # ordering key: ascending = better for every metric
        key_chunks.append(scores if metric == "euclidean" else -scores)
    cand_ids = np.concatenate(id_chunks)
    cand_keys = np.concatenate(key_chunks)

    take = min(params.t if params.rerank else params.k, cand_ids.shape[0])
    order = np.lexsort((cand_ids, cand_keys))[:take]
    top_ids = cand_ids[order]

    if params.rerank:
        diss = _exact_dissimilarity(index, x, top_ids)
        keep = np.lexsort((top_ids, diss))[: min(params.k, top_ids.shape[0])]
        ids = top_ids[keep]
        scores = diss[keep] if metric == "euclidean" else -diss[keep]
    else:
        ids = top_ids
        scores = cand_keys[order]
        if metric == "euclidean":
            scores = (scores + F32(x @ x)).astype(F32)  # shift to ~squared distance
        else:
            scores = (-scores).astype(F32)

    return QueryResult(
        ids=ids.astype(np.int64),
        scores=scores.astype(F32),
        truncated=ids.shape[0] < params.k,
    )


def query_batch(index: RrrIndex, queries, params: QueryParams) -> list[QueryResult]:
    q = _check_finite(queries, "queries")
    return [query(index, q[i], params) for i in range(q.shape[0])]


# --- serialization ---------------------------------------------------------


def _write_quantized(out: bytearray, qm: QuantizedMatrix) -> None:
    out += qm.head_row.astype("<f4").tobytes()
    out += qm.col_scales.astype("<f4").tobytes()
    if qm.mixed:
        # pad the unquantized head row with zero codes so the payload is a
        # full rows x cols block
        out += np.zeros(qm.cols, dtype=np.int8).tobytes()
    out += np.ascontiguousarray(qm.values).tobytes()


def _write_factor(out: bytearray, factor, quantized: bool) -> None:
    if quantized:
        if not isinstance(factor, QuantizedMatrix):
            raise FormatError("quantized index holds an unquantized factor")
        _write_quantized(out, factor)
    else:
        out += np.ascontiguousarray(factor, dtype="<f4").tobytes()


def serialize(index: RrrIndex) -> bytes:
    cfg = index.config
    quantized = cfg.rrr.quantize
    flags = 0
    if quantized:
        flags |= FLAG_QUANTIZED
    if index.corpus is not None:
        flags |= FLAG_CORPUS
    if cfg.balanced:
        flags |= FLAG_BALANCED
    if cfg.scoring_mode == SCORING_EXACT_IVF:
        flags |= FLAG_EXACT_IVF

    out = bytearray()
    out += MAGIC
    out += _HEADER.pack(
        _METRIC_CODES[cfg.metric],
        index.dim,
        index.reduced_dim,
        cfg.rrr.rank,
        index.n_clusters,
        index.n_points,
        flags,
    )
    out += index.projection.astype("<f4").tobytes()
    out += index.centroids.astype("<f4").tobytes()
    for model in index.models:
        out += struct.pack("<I", model.n_points)
        out += model.point_ids.astype("<u8").tobytes()
        _write_factor(out, model.a, quantized)
        if model.b is not None:
            _write_factor(out, model.b, quantized)
        if cfg.metric == "euclidean":
            out += model.norm_terms.astype("<f4").tobytes()
    if index.corpus is not None:
        out += index.corpus.astype("<f4").tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    return bytes(out)


class _Cursor:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.off = 0

    def take(self, n: int, section: str) -> bytes:
        if self.off + n > len(self.buf):
            raise FormatError(f"truncated file: {section} at offset {self.off}")
        chunk = self.buf[self.off : self.off + n]
        self.off += n
        return chunk

    def array(self, dtype, count: int, section: str) -> np.ndarray:
        dt = np.dtype(dtype)
        raw = self.take(dt.itemsize * count, section)
        return np.frombuffer(raw, dtype=dt).copy()


def _read_quantized(cur: _Cursor, rows: int, cols: int, section: str) -> QuantizedMatrix:
    head = cur.array("<f4", cols, f"{section} head row").astype(F32)
    scales = cur.array("<f4", cols, f"{section} scales").astype(F32)
    values = cur.array(np.int8, rows * cols, f"{section} values").reshape(rows, cols)
    return QuantizedMatrix(
        rows=rows,
        cols=cols,
        values=np.ascontiguousarray(values[1:]),
        col_scales=scales,
        head_row=head,
        mixed=True,
    )


def _read_factor(cur: _Cursor, rows: int, cols: int, quantized: bool, section: str):
    if quantized:
        return _read_quantized(cur, rows, cols, section)
    return cur.array("<f4", rows * cols, section).astype(F32).reshape(rows, cols)


def deserialize(data: bytes) -> RrrIndex:
    cur = _Cursor(data)
    magic = cur.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}; expected {MAGIC!r}")
    metric_code, d, s, r, L, m, flags = _HEADER.unpack(cur.take(_HEADER.size, "header"))
    if metric_code not in _METRIC_NAMES:
        raise FormatError(f"unknown metric code {metric_code}")
    metric = _METRIC_NAMES[metric_code]
    quantized = bool(flags & FLAG_QUANTIZED)
    has_corpus = bool(flags & FLAG_CORPUS)
    exact_ivf = bool(flags & FLAG_EXACT_IVF)

    projection = cur.array("<f4", d * s, "projection").astype(F32).reshape(d, s)
    centroids = cur.array("<f4", L * s, "centroids").astype(F32).reshape(L, s)

    models: list[ClusterModel] = []
    total = 0
    for l in range(L):
        section = f"cluster {l}"
        (m_l,) = struct.unpack("<I", cur.take(4, f"{section} size"))
        ids = cur.array("<u8", m_l, f"{section} ids").astype(np.int64)
        exact = exact_ivf or m_l < r
        a_cols = m_l if exact else r
        a = _read_factor(cur, s, a_cols, quantized, f"{section} factor A")
        b = None if exact else _read_factor(cur, r, m_l, quantized, f"{section} factor B")
        norms = None
        if metric == "euclidean":
            norms = cur.array("<f4", m_l, f"{section} norms").astype(F32)
        models.append(ClusterModel(point_ids=ids, a=a, b=b, norm_terms=norms, exact=exact))
        total += m_l
    if total != m:
        raise FormatError(f"cluster records cover {total} points, header says {m}")

    corpus = None
    if has_corpus:
        corpus = cur.array("<f4", m * d, "corpus").astype(F32).reshape(m, d)

    crc_offset = cur.off
    (stored_crc,) = struct.unpack("<I", cur.take(4, "crc32"))
    actual = zlib.crc32(data[:crc_offset]) & 0xFFFFFFFF
    if stored_crc != actual:
        raise FormatError(f"crc mismatch at offset {crc_offset}: {stored_crc:#x} != {actual:#x}")
    if cur.off != len(data):
        raise FormatError(
            f"unknown trailing section at offset {cur.off}: {len(data) - cur.off} extra bytes"
        )

    cfg = IndexConfig(
        metric=metric,
        n_clusters=L,
        rrr=RrrConfig(rank=r, reduced_dim=s if s != d else None, quantize=quantized),
        scoring_mode=SCORING_EXACT_IVF if exact_ivf else SCORING_RRR,
        balanced=bool(flags & FLAG_BALANCED),
        rerank=has_corpus,
    )
    return RrrIndex(
        config=cfg,
        projection=projection,
        centroids=centroids,
        models=models,
        corpus=corpus,
        n_points=m,
        dim=d,
    )
