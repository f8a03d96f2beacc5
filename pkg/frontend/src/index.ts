/**
 * Node client for the rrann ANN index.
 *
 * The wrapper owns no numeric behavior: building and querying are delegated
 * to the `rrann` CLI as a subprocess, vectors cross the boundary as .fvecs
 * files, and indexes as the binary index format. The only parsing done here
 * is the index file header (magic + fixed-size fields) and the query CSV.
 */

import { spawnSync } from "node:child_process";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

export type Metric = "euclidean" | "ip" | "cosine";

const METRICS: Metric[] = ["euclidean", "ip", "cosine"];
const MAGIC = "RRRANN01";
const HEADER_BYTES = 8 + 1 + 4 + 4 + 4 + 4 + 8 + 4;

/** Bad arguments or flags (CLI exit code 2). */
export class UsageError extends Error {}
/** Malformed or unreadable data files (CLI exit code 3). */
export class DataFormatError extends Error {}
/** Core failure (CLI exit code 4 or an unexpected crash). */
export class InternalError extends Error {}

export interface IndexHeader {
  metric: Metric;
  dim: number;
  reducedDim: number;
  rank: number;
  clusters: number;
  points: number;
  quantized: boolean;
  hasCorpus: boolean;
  balanced: boolean;
  exactIvf: boolean;
}

export interface QueryResult {
  /** ids[q][rank]: corpus index, best first */
  ids: number[][];
  /** scores[q][rank]: float32 value printed by the core, parsed verbatim */
  scores: number[][];
}

/** Build options; keys mirror the CLI long flags. */
export interface BuildConfig {
  clusters?: number;
  rank?: number;
  "reduced-dim"?: number;
  quantize?: boolean;
  rerank?: boolean;
  balanced?: number;
  "exact-ivf"?: boolean;
  train?: string;
  "train-local"?: "routed" | "cluster";
  "train-w"?: number;
  seed?: number;
}

export type Vectors = number[][] | Float32Array[];

export function writeFvecs(file: string, vectors: Vectors): void {
  const rows = vectors.length;
  if (rows === 0) {
    fs.writeFileSync(file, Buffer.alloc(0));
    return;
  }
  const dim = vectors[0].length;
  const buf = Buffer.alloc(rows * (4 + 4 * dim));
  let off = 0;
  for (const row of vectors) {
    if (row.length !== dim) {
      throw new UsageError(`ragged vector list: expected dim ${dim}, got ${row.length}`);
    }
    buf.writeInt32LE(dim, off);
    off += 4;
    for (let j = 0; j < dim; j++) {
      buf.writeFloatLE(row[j] as number, off);
      off += 4;
    }
  }
  fs.writeFileSync(file, buf);
}

export function readFvecs(file: string): Float32Array[] {
  const buf = fs.readFileSync(file);
  const out: Float32Array[] = [];
  let off = 0;
  while (off < buf.length) {
    if (off + 4 > buf.length) {
      throw new DataFormatError(`${file}: truncated dimension prefix at offset ${off}`);
    }
    const dim = buf.readInt32LE(off);
    off += 4;
    if (off + 4 * dim > buf.length) {
      throw new DataFormatError(`${file}: truncated record at offset ${off}`);
    }
    const row = new Float32Array(dim);
    for (let j = 0; j < dim; j++) {
      row[j] = buf.readFloatLE(off);
      off += 4;
    }
    out.push(row);
  }
  return out;
}

export function readIndexHeader(file: string): IndexHeader {
  let fd: number;
  try {
    fd = fs.openSync(file, "r");
  } catch (err) {
    throw new DataFormatError(`${file}: ${(err as Error).message}`);
  }
  const buf = Buffer.alloc(HEADER_BYTES);
  try {
    const got = fs.readSync(fd, buf, 0, HEADER_BYTES, 0);
    if (got < HEADER_BYTES) {
      throw new DataFormatError(`${file}: shorter than the index header`);
    }
  } finally {
    fs.closeSync(fd);
  }
  if (buf.toString("latin1", 0, 8) !== MAGIC) {
    throw new DataFormatError(`${file}: bad magic, expected ${MAGIC}`);
  }
  const metricCode = buf.readUInt8(8);
  if (metricCode >= METRICS.length) {
    throw new DataFormatError(`${file}: unknown metric code ${metricCode}`);
  }
  // layout after the 8-byte magic: metric u8, d u32, s u32, r u32, L u32,
  // m u64, flags u32 (all little-endian, packed)
  const flags = buf.readUInt32LE(33);
  return {
    metric: METRICS[metricCode],
    dim: buf.readUInt32LE(9),
    reducedDim: buf.readUInt32LE(13),
    rank: buf.readUInt32LE(17),
    clusters: buf.readUInt32LE(21),
    points: Number(buf.readBigUInt64LE(25)),
    quantized: (flags & 1) !== 0,
    hasCorpus: (flags & 2) !== 0,
    balanced: (flags & 4) !== 0,
    exactIvf: (flags & 8) !== 0,
  };
}

export function runCli(args: string[]): string {
  const python = process.env.RRANN_PYTHON ?? "python3";
  const proc = spawnSync(python, ["-m", "rrann.cli", ...args], {
    encoding: "utf8",
    maxBuffer: 64 * 1024 * 1024,
  });
  if (proc.error) {
    throw new InternalError(`failed to launch ${python}: ${proc.error.message}`);
  }
  if (proc.status === 0) {
    return proc.stdout;
  }
  const detail = (proc.stderr || proc.stdout || "").trim();
  switch (proc.status) {
    case 2:
      throw new UsageError(detail);
    case 3:
      throw new DataFormatError(detail);
    default:
      throw new InternalError(detail || `exit code ${proc.status}`);
  }
}

export function parseQueryCsv(file: string): QueryResult {
  const text = fs.readFileSync(file, "utf8");
  const lines = text.trim().split("\n");
  if (lines[0] !== "query,rank,id,score") {
    throw new DataFormatError(`${file}: unexpected CSV header ${lines[0]}`);
  }
  const ids: number[][] = [];
  const scores: number[][] = [];
  for (const line of lines.slice(1)) {
    if (!line) continue;
    const [q, rank, id, score] = line.split(",");
    const qi = Number(q);
    while (ids.length <= qi) {
      ids.push([]);
      scores.push([]);
    }
    ids[qi][Number(rank)] = Number(id);
    scores[qi][Number(rank)] = Number(score);
  }
  return { ids, scores };
}

function buildFlags(cfg: BuildConfig): string[] {
  const args: string[] = [];
  if (cfg.clusters !== undefined) args.push("--clusters", String(cfg.clusters));
  if (cfg.rank !== undefined) args.push("--rank", String(cfg.rank));
  if (cfg["reduced-dim"] !== undefined) args.push("--reduced-dim", String(cfg["reduced-dim"]));
  if (cfg.quantize === false) args.push("--no-quantize");
  if (cfg.rerank === false) args.push("--no-rerank");
  if (cfg.balanced !== undefined) args.push("--balanced", String(cfg.balanced));
  if (cfg["exact-ivf"]) args.push("--exact-ivf");
  if (cfg.train !== undefined) args.push("--train", cfg.train);
  if (cfg["train-local"] !== undefined) args.push("--train-local", cfg["train-local"]);
  if (cfg["train-w"] !== undefined) args.push("--train-w", String(cfg["train-w"]));
  if (cfg.seed !== undefined) args.push("--seed", String(cfg.seed));
  return args;
}

export interface QueryOptions {
  rerank?: boolean;
}

export class Index {
  readonly metric: Metric;
  private readonly cfg: BuildConfig;
  private workdir: string | null = null;
  private indexPath: string | null = null;
  private header: IndexHeader | null = null;

  constructor(metric: Metric, cfg: BuildConfig = {}) {
    if (!METRICS.includes(metric)) {
      throw new UsageError(`invalid metric ${JSON.stringify(metric)}; expected one of ${METRICS.join(", ")}`);
    }
    this.metric = metric;
    this.cfg = { ...cfg };
  }

  /** Dimension of the indexed vectors; null before fit/load. */
  get dimension(): number | null {
    return this.header?.dim ?? null;
  }

  /** Path of the serialized index backing this handle; null before fit/load. */
  get path(): string | null {
    return this.indexPath;
  }

  private scratch(): string {
    if (this.workdir === null) {
      this.workdir = fs.mkdtempSync(path.join(os.tmpdir(), "rrann-"));
    }
    return this.workdir as string;
  }

  fit(vectors: Vectors): this {
    const dir = this.scratch();
    const corpus = path.join(dir, "corpus.fvecs");
    writeFvecs(corpus, vectors);
    const out = path.join(dir, "index.rrr");
    runCli([
      "build",
      "--data", corpus,
      "--metric", this.metric,
      ...buildFlags(this.cfg),
      "--out", out,
    ]);
    this.indexPath = out;
    this.header = readIndexHeader(out);
    return this;
  }

  query(queries: Vectors, k: number, w: number, t: number, opts: QueryOptions = {}): QueryResult {
    if (this.indexPath === null) {
      throw new UsageError("query() before fit() or load()");
    }
    const dir = this.scratch();
    const qfile = path.join(dir, "queries.fvecs");
    const csv = path.join(dir, "results.csv");
    writeFvecs(qfile, queries);
    const args = [
      "query",
      "--index", this.indexPath,
      "--queries", qfile,
      "--k", String(k),
      "--w", String(w),
      "--t", String(t),
      "--csv", csv,
    ];
    if (opts.rerank === false) args.push("--no-rerank");
    runCli(args);
    return parseQueryCsv(csv);
  }

  save(file: string): void {
    if (this.indexPath === null) {
      throw new UsageError("save() before fit() or load()");
    }
    fs.copyFileSync(this.indexPath, file);
  }

  static load(file: string): Index {
    const header = readIndexHeader(file); // validates magic up front
    const idx = new Index(header.metric);
    idx.indexPath = path.resolve(file);
    idx.header = header;
    return idx;
  }

  /** Remove this handle's scratch directory (saved indexes are untouched). */
  dispose(): void {
    if (this.workdir !== null) {
      fs.rmSync(this.workdir, { recursive: true, force: true });
      this.workdir = null;
      this.indexPath = null;
      this.header = null;
    }
  }
}
