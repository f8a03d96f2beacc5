import assert from "node:assert/strict";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";
import { after, test } from "node:test";

import {
  DataFormatError,
  Index,
  UsageError,
  parseQueryCsv,
  readFvecs,
  readIndexHeader,
  runCli,
  writeFvecs,
} from "../src/index";

// deterministic PRNG so the corpus is reproducible without numpy
function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function gaussianMatrix(rows: number, dim: number, seed: number): number[][] {
  const rand = mulberry32(seed);
  const out: number[][] = [];
  for (let i = 0; i < rows; i++) {
    const row: number[] = [];
    for (let j = 0; j < dim; j++) {
      // Box-Muller
      const u = Math.max(rand(), 1e-12);
      const v = rand();
      row.push(Math.sqrt(-2 * Math.log(u)) * Math.cos(2 * Math.PI * v));
    }
    out.push(row);
  }
  return out;
}

const scratch = fs.mkdtempSync(path.join(os.tmpdir(), "rrann-client-test-"));
const handles: Index[] = [];

after(() => {
  for (const h of handles) h.dispose();
  fs.rmSync(scratch, { recursive: true, force: true });
});

const CORPUS = gaussianMatrix(400, 16, 1);
const QUERIES = gaussianMatrix(100, 16, 2);
const CFG = { clusters: 8, rank: 4, "reduced-dim": 8, seed: 5 } as const;

function fitted(): Index {
  const idx = new Index("euclidean", CFG).fit(CORPUS);
  handles.push(idx);
  return idx;
}

test("fvecs round trip", () => {
  const file = path.join(scratch, "rt.fvecs");
  writeFvecs(file, CORPUS.slice(0, 10));
  const back = readFvecs(file);
  assert.equal(back.length, 10);
  for (let i = 0; i < 10; i++) {
    for (let j = 0; j < 16; j++) {
      assert.equal(back[i][j], Math.fround(CORPUS[i][j]));
    }
  }
});

test("invalid metric raises a usage error", () => {
  assert.throws(() => new Index("hamming" as never), UsageError);
});

test("fit exposes the header fields", () => {
  const idx = fitted();
  assert.equal(idx.dimension, 16);
  assert.equal(idx.metric, "euclidean");
  const header = readIndexHeader(idx.path as string);
  assert.equal(header.clusters, 8);
  assert.equal(header.rank, 4);
  assert.equal(header.reducedDim, 8);
  assert.equal(header.points, 400);
  assert.ok(header.quantized);
  assert.ok(header.hasCorpus);
});

test("binding parity: results identical to a direct CLI run on the same index", () => {
  const idx = fitted();
  const saved = path.join(scratch, "parity.rrr");
  idx.save(saved);

  const viaBinding = idx.query(QUERIES, 10, 5, 100);

  // drive the CLI by hand against the saved index and the same queries
  const qfile = path.join(scratch, "parity-queries.fvecs");
  const csv = path.join(scratch, "parity-results.csv");
  writeFvecs(qfile, QUERIES);
  runCli([
    "query",
    "--index", saved,
    "--queries", qfile,
    "--k", "10",
    "--w", "5",
    "--t", "100",
    "--csv", csv,
  ]);
  const viaCli = parseQueryCsv(csv);

  assert.equal(viaBinding.ids.length, 100);
  assert.deepEqual(viaBinding.ids, viaCli.ids);
  assert.deepEqual(viaBinding.scores, viaCli.scores);
});

test("save, load, and query round trip is identical", () => {
  const idx = fitted();
  const first = idx.query(QUERIES, 5, 4, 50);
  const saved = path.join(scratch, "roundtrip.rrr");
  idx.save(saved);

  const loaded = Index.load(saved);
  handles.push(loaded);
  assert.equal(loaded.dimension, 16);
  assert.equal(loaded.metric, "euclidean");
  const second = loaded.query(QUERIES, 5, 4, 50);
  assert.deepEqual(first.ids, second.ids);
  assert.deepEqual(first.scores, second.scores);
});

test("query before fit raises a usage error", () => {
  const idx = new Index("euclidean");
  assert.throws(() => idx.query(QUERIES, 5, 1, 10), UsageError);
});

test("bad w surfaces as a usage error from the core", () => {
  const idx = fitted();
  assert.throws(() => idx.query(QUERIES, 5, 99, 100), UsageError);
});

test("corrupt index file surfaces as a data error", () => {
  const idx = fitted();
  const saved = path.join(scratch, "corrupt.rrr");
  idx.save(saved);
  const bytes = fs.readFileSync(saved);
  fs.writeFileSync(saved, bytes.subarray(0, Math.floor(bytes.length / 2)));
  const loaded = Index.load(saved); // header region is intact
  handles.push(loaded);
  assert.throws(() => loaded.query(QUERIES, 5, 4, 50), DataFormatError);
});

test("load rejects files without the magic", () => {
  const bogus = path.join(scratch, "bogus.rrr");
  fs.writeFileSync(bogus, Buffer.alloc(64));
  assert.throws(() => Index.load(bogus), DataFormatError);
});

test("no-rerank build and query path", () => {
  const idx = new Index("ip", { ...CFG, rerank: false }).fit(CORPUS);
  handles.push(idx);
  const header = readIndexHeader(idx.path as string);
  assert.ok(!header.hasCorpus);
  const res = idx.query(QUERIES, 5, 4, 50, { rerank: false });
  assert.equal(res.ids.length, 100);
  assert.equal(res.ids[0].length, 5);
  // scores descend for inner-product metric
  for (const row of res.scores) {
    for (let j = 1; j < row.length; j++) {
      assert.ok(row[j] <= row[j - 1]);
    }
  }
});

test("recall sanity against CLI ground truth", () => {
  const idx = fitted();
  // exhaustive parameters recover the exact neighbors
  const res = idx.query(QUERIES, 10, 8, 400);
  const base = path.join(scratch, "gt-base.fvecs");
  const qf = path.join(scratch, "gt-queries.fvecs");
  const gtFile = path.join(scratch, "gt.ivecs");
  writeFvecs(base, CORPUS);
  writeFvecs(qf, QUERIES);
  runCli(["gt", "--data", base, "--queries", qf, "--k", "10", "--out", gtFile]);
  const buf = fs.readFileSync(gtFile);
  let hits = 0;
  for (let qi = 0; qi < 100; qi++) {
    const truth = new Set<number>();
    const off = qi * (4 + 10 * 4) + 4;
    for (let j = 0; j < 10; j++) truth.add(buf.readInt32LE(off + 4 * j));
    for (const id of res.ids[qi]) if (truth.has(id)) hits++;
  }
  assert.equal(hits, 1000); // w = L and t = m: exact
});
