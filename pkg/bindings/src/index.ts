/**
 * Scripting bindings for the trajlens pipeline.
 *
 * Arrays are plain `number[][]` / `number[]` (anything array-like can be
 * spread into them); numeric results come back as JavaScript doubles parsed
 * from the native process's full-precision decimal serialization, so values
 * agree with the native implementation to well under 1e-9.
 */

import { callOnce, NativeChannel, NativeError } from "./native.js";

export { NativeChannel, NativeError, callOnce };

export type Series = ReadonlyArray<ReadonlyArray<number>>;

export interface RankedMarker {
  marker: string;
  r_u1: number;
  r_u2: number;
  l2: number;
}

export interface KmeansResult {
  labels: number[];
  wcss: number;
  iterations: number;
}

export interface PipelineResult {
  manifest: Record<string, unknown>;
  manifest_sha256: string;
  outdir: string;
}

function checkSeries(name: string, series: Series): number[][] {
  const rows = series.map((row) => [...row]);
  if (rows.length === 0 || rows.some((row) => row.length !== 2)) {
    const got = rows.length === 0 ? "(0, ?)" : `(${rows.length}, ${rows[0].length})`;
    throw new NativeError({
      type: "ShapeError",
      message: `expected ${name} shaped (n, 2), got ${got}`,
    });
  }
  if (rows.some((row) => row.some((v) => !Number.isFinite(v)))) {
    throw new NativeError({ type: "ShapeError", message: `${name} contains non-finite values` });
  }
  return rows;
}

/** Stateless facade: each method is one native call over a shared channel. */
export class Trajlens {
  private readonly channel: NativeChannel;

  constructor(python = "python3") {
    this.channel = new NativeChannel(python);
  }

  /** Multivariate DTW distance between two (n, 2) series. */
  async dtw(a: Series, b: Series): Promise<number> {
    const result = (await this.channel.call("dtw", {
      a: checkSeries("a", a),
      b: checkSeries("b", b),
    })) as { distance: number };
    return result.distance;
  }

  /** Point-biserial correlation of a binary column against a real column. */
  async pointBiserial(f: ReadonlyArray<number>, u: ReadonlyArray<number>): Promise<number> {
    const result = (await this.channel.call("point_biserial", { f: [...f], u: [...u] })) as {
      r: number;
    };
    return result.r;
  }

  /** Rank correlation records by the L2 norm of (r_u1, r_u2). */
  async l2Rank(
    records: ReadonlyArray<{ marker: string; r_u1: number; r_u2: number }>,
    topK: number | null = 15,
  ): Promise<RankedMarker[]> {
    const result = (await this.channel.call("l2_rank", {
      records: records.map((r) => ({ ...r })),
      top_k: topK,
    })) as { ranked: RankedMarker[] };
    return result.ranked;
  }

  /** k-means with DTW over a list of (n_i, 2) series. */
  async dtwKmeans(
    series: ReadonlyArray<Series>,
    k: number,
    opts: { seed?: number; maxIter?: number } = {},
  ): Promise<KmeansResult> {
    return (await this.channel.call("dtw_kmeans", {
      series: series.map((s, i) => checkSeries(`series[${i}]`, s)),
      k,
      seed: opts.seed ?? 0,
      max_iter: opts.maxIter ?? 50,
    })) as KmeansResult;
  }

  /** Reduce an (n, d) matrix to (n, 2) coordinates. */
  async reduceMatrix(
    matrix: Series,
    opts: { nNeighbors?: number; minDist?: number; epochs?: number; seed?: number } = {},
  ): Promise<number[][]> {
    const result = (await this.channel.call("reduce", {
      matrix: matrix.map((row) => [...row]),
      n_neighbors: opts.nNeighbors ?? 15,
      min_dist: opts.minDist ?? 0.1,
      epochs: opts.epochs ?? 200,
      seed: opts.seed ?? 0,
    })) as { coords: number[][] };
    return result.coords;
  }

  close(): void {
    this.channel.close();
  }
}

/** Run the full pipeline from a config file; returns the manifest and its
 * file hash (equal to the hash printed by `trajlens run` for the same
 * config). One-shot because the run owns the process for its duration. */
export function runPipeline(configPath: string, python = "python3"): PipelineResult {
  return callOnce("run_pipeline", { config: configPath }, python) as PipelineResult;
}
