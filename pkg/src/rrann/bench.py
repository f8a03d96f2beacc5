"""Dataset ingestion, exact ground truth, recall/QPS measurement, sweeps.

File formats follow the texmex convention: every record is a little-endian
int32 dimension prefix followed by that many float32 (.fvecs) or int32
(.ivecs) values. Recall numbers are always computed against the brute-force
oracle in this module.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ParameterError
from .index import IndexConfig, QueryParams, RrrIndex, build, serialize
from .linalg import as_matrix
from .rrr import RrrConfig

F32 = np.float32

SWEEP_COLUMNS = ("L", "s", "r", "w", "t", "recall", "mean_latency", "qps", "index_bytes", "status")


@dataclass
class Dataset:
    vectors: np.ndarray  # corpus, m x d float32
    queries: np.ndarray  # n_q x d float32
    metric: str = "euclidean"
    ground_truth: np.ndarray | None = None  # n_q x k int64


def load_fvecs(path) -> np.ndarray:
    """Read an .fvecs file into an m x d float32 matrix."""
    return _load_vecs(path, "<f4").astype(F32)


def load_ivecs(path) -> np.ndarray:
    """Read an .ivecs file into an m x d int32 id matrix."""
    return _load_vecs(path, "<i4")


def _load_vecs(path, payload_dtype: str) -> np.ndarray:
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0:
        return np.zeros((0, 0), dtype=np.dtype(payload_dtype))
    if raw.size < 4:
        raise FormatError(f"{path}: truncated before record 0 dimension prefix")
    dim = int(raw[:4].view("<i4")[0])
    if dim < 0:
        raise FormatError(f"{path}: record 0 has negative dimension {dim}")
    record_bytes = 4 * (dim + 1)
    if raw.size % record_bytes != 0:
        raise FormatError(
            f"{path}: size {raw.size} not a multiple of record size {record_bytes} "
            f"(truncated around record {raw.size // record_bytes})"
        )
    table = raw.view("<i4").reshape(-1, dim + 1)
    dims = table[:, 0]
    bad = np.nonzero(dims != dim)[0]
    if bad.size:
        raise FormatError(f"{path}: record {bad[0]} has dim {dims[bad[0]]}, expected {dim}")
    return np.ascontiguousarray(table[:, 1:]).view(payload_dtype)


def write_fvecs(path, vectors) -> None:
    _write_vecs(path, np.ascontiguousarray(vectors, dtype="<f4"))


def write_ivecs(path, ids) -> None:
    _write_vecs(path, np.ascontiguousarray(ids, dtype="<i4"))


def _write_vecs(path, table: np.ndarray) -> None:
    m, d = table.shape
    out = np.empty((m, d + 1), dtype="<i4")
    out[:, 0] = d
    out[:, 1:] = table.view("<i4")
    out.tofile(path)


def brute_force_knn(corpus, queries, k: int, metric: str = "euclidean", threads: int = 1) -> np.ndarray:
    """Exact top-k ids per query, ties broken toward the lower id.

    ``threads`` > 1 fans the query chunks over a thread pool (the distance
    matmuls release the GIL); output is independent of the thread count.
    """
    corpus = as_matrix(corpus, "corpus")
    queries = as_matrix(queries, "queries")
    m = corpus.shape[0]
    if k < 1 or k > m:
        raise ParameterError(f"k={k} out of range [1, {m}]")
    if metric not in ("euclidean", "ip", "cosine"):
        raise ParameterError(f"unknown metric: {metric!r}")
    c = corpus.astype(np.float64)
    if metric == "cosine":
        norms = np.linalg.norm(c, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        c = c / norms
    out = np.empty((queries.shape[0], k), dtype=np.int64)
    chunk = max(1, (1 << 22) // max(m, 1))

    def solve(start: int) -> None:
        q = queries[start : start + chunk].astype(np.float64)
        if metric == "euclidean":
            diss = (q * q).sum(1)[:, None] - 2.0 * (q @ c.T) + (c * c).sum(1)[None, :]
        else:
            diss = -(q @ c.T)
        order = np.argsort(diss, axis=1, kind="stable")
        out[start : start + q.shape[0]] = order[:, :k]

    starts = range(0, queries.shape[0], chunk)
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(solve, starts))
    else:
        for start in starts:
            solve(start)
    return out


def recall_at_k(result_ids, truth_ids, k: int) -> float:
    """|result ∩ truth_k| / k."""
    truth = set(int(i) for i in np.asarray(truth_ids).ravel()[:k])
    if len(truth) < k:
        raise ParameterError(f"ground truth has fewer than k={k} ids")
    got = set(int(i) for i in np.asarray(result_ids).ravel())
    return len(got & truth) / k


def mean_recall(results: list, truth: np.ndarray, k: int) -> float:
    return float(np.mean([recall_at_k(r.ids, truth[i], k) for i, r in enumerate(results)]))


def synth_dataset(
    m: int,
    n_queries: int,
    d: int,
    kind: str = "gaussian",
    seed: int = 0,
    n_blobs: int = 10,
    metric: str = "euclidean",
) -> Dataset:
    """Deterministic synthetic corpus + queries.

    "gaussian" draws everything i.i.d. standard normal; "clustered" plants
    well-separated blobs so routing has real structure to find.
    """
    if d < 1:
        raise ParameterError("d must be >= 1")
    rng = np.random.default_rng(seed)
    if kind == "gaussian":
        vectors = rng.standard_normal((m, d))
        queries = rng.standard_normal((n_queries, d))
    elif kind == "clustered":
        centers = rng.standard_normal((n_blobs, d)) * 6.0
        labels = rng.integers(n_blobs, size=m)
        vectors = centers[labels] + rng.standard_normal((m, d))
        qlabels = rng.integers(n_blobs, size=n_queries)
        queries = centers[qlabels] + rng.standard_normal((n_queries, d))
    else:
        raise ParameterError(f"unknown dataset kind: {kind!r}")
    return Dataset(
        vectors=vectors.astype(F32), queries=queries.astype(F32), metric=metric
    )


@dataclass
class SweepRow:
    L: int
    s: int
    r: int
    w: int
    t: int
    recall: float
    mean_latency: float
    qps: float
    index_bytes: int
    status: str = "ok"


@dataclass
class SweepReport:
    rows: list[SweepRow] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(SWEEP_COLUMNS)
            for row in self.rows:
                writer.writerow(
                    [
                        row.L, row.s, row.r, row.w, row.t,
                        f"{row.recall:.6f}", f"{row.mean_latency:.9f}",
                        f"{row.qps:.3f}", row.index_bytes, row.status,
                    ]
                )


def _timed_run(index: RrrIndex, queries: np.ndarray, params: QueryParams, repeats: int):
    """Run the full query set `repeats` times; keep the fastest wall time."""
    best = float("inf")
    results = None
    for _ in range(max(1, repeats)):
        start = time.perf_counter()
        out = index.query_batch(queries, params)
        elapsed = time.perf_counter() - start
        if elapsed < best:
            best = elapsed
        results = out
    return results, best


def sweep(
    dataset: Dataset,
    build_grid: list[IndexConfig],
    query_grid: list[QueryParams],
    k: int,
    repeats: int = 5,
    truth: np.ndarray | None = None,
) -> SweepReport:
    """Cross every build config with every query config; one CSV row each.

    Indexes are built once per build config. Build failures produce an error
    row and the sweep keeps going.
    """
    if not build_grid or not query_grid:
        raise ParameterError("sweep: empty grid")
    if truth is None:
        truth = dataset.ground_truth
    if truth is None:
        truth = brute_force_knn(dataset.vectors, dataset.queries, k, dataset.metric)
    report = SweepReport()
    for bc in build_grid:
        s_col = bc.rrr.reduced_dim or dataset.vectors.shape[1]
        try:
            index = build(dataset.vectors, bc)
            index_bytes = len(serialize(index))
        except Exception as exc:  # noqa: BLE001 - per-row failure policy
            for qp in query_grid:
                report.rows.append(
                    SweepRow(
                        L=bc.n_clusters or 0, s=s_col, r=bc.rrr.rank,
                        w=qp.w, t=qp.t, recall=float("nan"),
                        mean_latency=float("nan"), qps=float("nan"),
                        index_bytes=0, status=f"build-error: {exc}",
                    )
                )
            continue
        for qp in query_grid:
            try:
                results, wall = _timed_run(index, dataset.queries, qp, repeats)
                rec = mean_recall(results, truth, k)
                n_q = dataset.queries.shape[0]
                report.rows.append(
                    SweepRow(
                        L=index.n_clusters, s=index.reduced_dim, r=bc.rrr.rank,
                        w=qp.w, t=qp.t, recall=rec,
                        mean_latency=wall / n_q, qps=n_q / wall,
                        index_bytes=index_bytes, status="ok",
                    )
                )
            except Exception as exc:  # noqa: BLE001
                report.rows.append(
                    SweepRow(
                        L=index.n_clusters, s=index.reduced_dim, r=bc.rrr.rank,
                        w=qp.w, t=qp.t, recall=float("nan"),
                        mean_latency=float("nan"), qps=float("nan"),
                        index_bytes=index_bytes, status=f"query-error: {exc}",
                    )
                )
    return report


def parse_grid(text: str) -> tuple[list[IndexConfig], list[QueryParams], int]:
    """Parse a sweep grid from TOML text.

    Expected shape::

        metric = "euclidean"
        [build]
        L = [64, 128]
        r = [16, 32]
        s = [32]          # 0 disables reduction
        quantize = [true]
        [query]
        w = [4, 8]
        t = [100, 400]
        k = 10
        rerank = true
    """
    try:
        import tomllib as toml
    except ModuleNotFoundError:  # python < 3.11
        import tomli as toml

    try:
        doc = toml.loads(text)
    except toml.TOMLDecodeError as exc:
        raise FormatError(f"grid file: {exc}") from exc
    metric = doc.get("metric", "euclidean")
    b = doc.get("build", {})
    q = doc.get("query", {})
    seed = int(doc.get("seed", 0))
    builds = []
    for L in b.get("L", [None]):
        for r in b.get("r", [32]):
            for s in b.get("s", [64]):
                for quant in b.get("quantize", [True]):
                    builds.append(
                        IndexConfig(
                            metric=metric,
                            n_clusters=L,
                            rrr=RrrConfig(
                                rank=int(r),
                                reduced_dim=None if not s else int(s),
                                quantize=bool(quant),
                                seed=seed,
                            ),
                            balanced=bool(b.get("balanced", False)),
                            rerank=bool(q.get("rerank", True)),
                            seed=seed,
                        )
                    )
    k = int(q.get("k", 10))
    queries = []
    for w in q.get("w", [1]):
        for t in q.get("t", [max(100, k)]):
            queries.append(QueryParams(k=k, w=int(w), t=int(t), rerank=bool(q.get("rerank", True))))
    if not builds or not queries:
        raise FormatError("grid file: empty build or query grid")
    return builds, queries, k


def gnuplot_script(csv_path: str, out_path: str) -> str:
    """Emit a gnuplot script plotting QPS against recall from a sweep CSV."""
    return (
        "set datafile separator ','\n"
        "set key autotitle columnhead\n"
        "set xlabel 'recall'\n"
        "set ylabel 'QPS'\n"
        "set logscale y\n"
        f"set output '{out_path}'\n"
        "set terminal pngcairo size 800,600\n"
        f"plot '{csv_path}' using 6:8 with points pt 7\n"
    )
