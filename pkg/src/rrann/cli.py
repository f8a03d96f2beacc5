"""Command-line interface: build, gt, query, sweep, synth.

Exit codes: 0 ok, 2 usage, 3 data/format, 4 internal.
"""

from __future__ import annotations

import sys
import time
from pathlib import Path

import click
import numpy as np

from . import bench
from .errors import RrannError
from .index import IndexConfig, QueryParams, RrrIndex, build
from .rrr import RrrConfig

_EXIT_BY_CATEGORY = {"usage": 2, "data": 3, "internal": 4}


@click.group()
def cli() -> None:
    """Clustering-based ANN search with low-rank regression scoring."""


def _resolve_reduced_dim(value: int, d: int) -> int | None:
    if value == 0:
        return None
    if value < 0:  # auto
        return min(64, d)
    return value


@cli.command("build")
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--metric", default="euclidean", type=click.Choice(["euclidean", "ip", "cosine"]))
@click.option("--clusters", "-L", "clusters", default=0, help="0 = auto (~sqrt(m))")
@click.option("--rank", default=32, show_default=True, help="clamped to the reduced dimension")
@click.option("--reduced-dim", default=-1, help="-1 = auto (min(64, d)), 0 = off")
@click.option("--no-rerank", is_flag=True, help="drop the corpus from the index")
@click.option("--no-quantize", is_flag=True, help="keep factors in float32")
@click.option("--exact-ivf", is_flag=True, help="store raw cluster blocks (ablation baseline)")
@click.option("--balanced", default=0, help="balance clusters with this size spread")
@click.option("--train", default="corpus", help="training set .fvecs, or 'corpus'")
@click.option("--train-local", default="routed", type=click.Choice(["routed", "cluster"]))
@click.option("--train-w", default=2, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--workers", default=1, show_default=True, help="cluster-training threads")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def build_cmd(data, metric, clusters, rank, reduced_dim, no_rerank, no_quantize,
              exact_ivf, balanced, train, train_local, train_w, seed, workers, out):
    """Build an index from an .fvecs corpus and serialize it."""
    corpus = bench.load_fvecs(data)
    d = corpus.shape[1]
    train_set = None
    source = "corpus"
    if train != "corpus":
        train_set = bench.load_fvecs(train)
        source = "query_sample"
    s_eff = _resolve_reduced_dim(reduced_dim, d)
    cfg = IndexConfig(
        metric=metric,
        n_clusters=clusters or None,
        rrr=RrrConfig(
            rank=min(rank, s_eff if s_eff is not None else d),
            reduced_dim=s_eff,
            train_source=source,
            local_train="cluster_only" if train_local == "cluster" else "routed",
            train_w=train_w,
            quantize=not no_quantize,
            seed=seed,
        ),
        scoring_mode="exact_ivf" if exact_ivf else "rrr",
        balanced=balanced > 0,
        balance_delta=balanced if balanced > 0 else 16,
        rerank=not no_rerank,
        seed=seed,
    )
    start = time.perf_counter()
    index = build(corpus, cfg, train=train_set, workers=workers)
    index.save(out)
    elapsed = time.perf_counter() - start
    click.echo(
        f"built {index.n_points} points, {index.n_clusters} clusters, "
        f"d={index.dim}, s={index.reduced_dim}, r={cfg.rrr.rank} "
        f"in {elapsed:.2f}s -> {out}"
    )


@cli.command("gt")
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--queries", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--k", default=100, show_default=True)
@click.option("--metric", default="euclidean", type=click.Choice(["euclidean", "ip", "cosine"]))
@click.option("--threads", default=1, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def gt_cmd(data, queries, k, metric, threads, out):
    """Compute exact k-NN ground truth and write it as .ivecs."""
    corpus = bench.load_fvecs(data)
    q = bench.load_fvecs(queries)
    truth = bench.brute_force_knn(corpus, q, k, metric, threads=threads)
    bench.write_ivecs(out, truth.astype(np.int32))
    click.echo(f"wrote {truth.shape[0]} x {k} ground truth -> {out}")


@cli.command("query")
@click.option("--index", "index_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--queries", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--k", default=10, show_default=True)
@click.option("--w", required=True, type=int)
@click.option("--t", required=True, type=int)
@click.option("--no-rerank", is_flag=True)
@click.option("--gt", "gt_path", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--csv", "csv_path", default=None, type=click.Path(dir_okay=False))
def query_cmd(index_path, queries, k, w, t, no_rerank, gt_path, csv_path):
    """Run queries against a serialized index; report recall and QPS."""
    index = RrrIndex.load(index_path)
    q = bench.load_fvecs(queries)
    params = QueryParams(k=k, w=w, t=t, rerank=not no_rerank)
    start = time.perf_counter()
    results = index.query_batch(q, params)
    elapsed = time.perf_counter() - start
    if csv_path:
        with open(csv_path, "w") as f:
            f.write("query,rank,id,score\n")
            for qi, res in enumerate(results):
                for rank_i, (pid, score) in enumerate(zip(res.ids, res.scores)):
                    f.write(f"{qi},{rank_i},{int(pid)},{float(score):.9g}\n")
    line = f"{len(results)} queries in {elapsed:.3f}s ({len(results) / elapsed:.1f} qps)"
    if gt_path:
        truth = bench.load_ivecs(gt_path).astype(np.int64)
        rec = bench.mean_recall(results, truth, k)
        line += f", recall@{k}={rec:.4f}"
    click.echo(line)


@cli.command("sweep")
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--queries", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--gt", "gt_path", default=None, type=click.Path(dir_okay=False))
@click.option("--grid", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--repeats", default=5, show_default=True)
@click.option("--csv", "csv_path", required=True, type=click.Path(dir_okay=False))
@click.option("--metric", default="euclidean", type=click.Choice(["euclidean", "ip", "cosine"]))
@click.option("--gnuplot", default=None, type=click.Path(dir_okay=False),
              help="also emit a gnuplot script here")
def sweep_cmd(data, queries, gt_path, grid, repeats, csv_path, metric, gnuplot):
    """Run a hyperparameter sweep from a TOML grid; emit a CSV."""
    corpus = bench.load_fvecs(data)
    q = bench.load_fvecs(queries)
    builds, qparams, k = bench.parse_grid(Path(grid).read_text())
    if gt_path and Path(gt_path).exists():
        truth = bench.load_ivecs(gt_path).astype(np.int64)
    else:
        # cache ground truth beside the dataset for future runs
        cache = Path(gt_path) if gt_path else Path(data).with_suffix(f".gt{k}.ivecs")
        truth = bench.brute_force_knn(corpus, q, k, metric)
        bench.write_ivecs(cache, truth.astype(np.int32))
        click.echo(f"cached ground truth -> {cache}")
    dataset = bench.Dataset(vectors=corpus, queries=q, metric=metric, ground_truth=truth)
    report = bench.sweep(dataset, builds, qparams, k, repeats=repeats)
    report.write_csv(csv_path)
    if gnuplot:
        Path(gnuplot).write_text(bench.gnuplot_script(csv_path, csv_path + ".png"))
    click.echo(f"wrote {len(report.rows)} rows -> {csv_path}")


@cli.command("synth")
@click.option("--m", required=True, type=int)
@click.option("--q", "n_queries", required=True, type=int)
@click.option("--d", required=True, type=int)
@click.option("--kind", default="gaussian", type=click.Choice(["gaussian", "clustered"]))
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, help="output prefix: writes <out>.base.fvecs and <out>.query.fvecs")
def synth_cmd(m, n_queries, d, kind, seed, out):
    """Generate a synthetic dataset and write it as .fvecs files."""
    ds = bench.synth_dataset(m, n_queries, d, kind=kind, seed=seed)
    bench.write_fvecs(f"{out}.base.fvecs", ds.vectors)
    bench.write_fvecs(f"{out}.query.fvecs", ds.queries)
    click.echo(f"wrote {m} base + {n_queries} query vectors (d={d}) -> {out}.*.fvecs")


def main() -> None:
    try:
        cli(standalone_mode=False)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except click.UsageError as exc:
        exc.show()
        sys.exit(2)
    except click.ClickException as exc:
        exc.show()
        sys.exit(2)
    except click.Abort:
        sys.exit(130)
    except RrannError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(_EXIT_BY_CATEGORY.get(exc.category, 4))
    except OSError as exc:
        click.echo(f"io error: {exc}", err=True)
        sys.exit(3)
    except Exception as exc:  # noqa: BLE001 - final guard for exit-code contract
        click.echo(f"internal error: {exc}", err=True)
        sys.exit(4)


if __name__ == "__main__":
    main()
