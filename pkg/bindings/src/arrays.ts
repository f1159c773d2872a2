/**
 * Batch array operations mirroring the scoring engine's per-token math.
 *
 * All functions are pure and operate on [sequences x positions] arrays with
 * an optional boolean mask; masked positions are ignored by aggregates and
 * carry zeros in elementwise outputs. Values agree with the engine's JSONL
 * exports to at least nine significant digits on shared fixtures.
 */

export interface ArrayBatch {
  logProbs: number[][];
  entropies: number[][];
  mask?: boolean[][];
}

export interface PhiBatchResult {
  phi: number[][];
  phiClipped: number[][];
}

export type WeightScheme = "sft" | "dft" | "idft" | "hard_truncate";

export interface WeightOptions {
  tau?: number;
  mask?: boolean[][];
}

export interface BatchSummary {
  count: number;
  avgPhi: number | null;
  fractions: Record<string, number> | null;
}

const DEFAULT_CLIP_BOUND = 10;

function assertAligned(a: number[][], b: number[][], what: string): void {
  if (a.length !== b.length) {
    throw new RangeError(`${what}: row counts differ (${a.length} vs ${b.length})`);
  }
  for (let i = 0; i < a.length; i++) {
    if (a[i].length !== b[i].length) {
      throw new RangeError(`${what}: row ${i} lengths differ (${a[i].length} vs ${b[i].length})`);
    }
  }
}

function assertMask(values: number[][], mask: boolean[][] | undefined): void {
  if (!mask) return;
  if (mask.length !== values.length) {
    throw new RangeError(`mask row count ${mask.length} != ${values.length}`);
  }
  for (let i = 0; i < values.length; i++) {
    if (mask[i].length !== values[i].length) {
      throw new RangeError(`mask row ${i} length ${mask[i].length} != ${values[i].length}`);
    }
  }
}

export function clipPhi(value: number, clipBound: number = DEFAULT_CLIP_BOUND): number {
  return Math.min(Math.max(value, -clipBound), clipBound);
}

export function phiBatch(batch: ArrayBatch, clipBound: number = DEFAULT_CLIP_BOUND): PhiBatchResult {
  assertAligned(batch.logProbs, batch.entropies, "phiBatch");
  assertMask(batch.logProbs, batch.mask);
  const phi: number[][] = [];
  const phiClipped: number[][] = [];
  for (let i = 0; i < batch.logProbs.length; i++) {
    const rowPhi: number[] = [];
    const rowClipped: number[] = [];
    for (let j = 0; j < batch.logProbs[i].length; j++) {
      if (batch.mask && !batch.mask[i][j]) {
        rowPhi.push(0);
        rowClipped.push(0);
        continue;
      }
      const value = batch.logProbs[i][j] + batch.entropies[i][j];
      rowPhi.push(value);
      rowClipped.push(clipPhi(value, clipBound));
    }
    phi.push(rowPhi);
    phiClipped.push(rowClipped);
  }
  return { phi, phiClipped };
}

export function batchSummary(
  phi: number[][],
  mask?: boolean[][],
  thresholds: number[] = [-1, -3, -5],
): BatchSummary {
  assertMask(phi, mask);
  const kept: number[] = [];
  for (let i = 0; i < phi.length; i++) {
    for (let j = 0; j < phi[i].length; j++) {
      if (!mask || mask[i][j]) kept.push(phi[i][j]);
    }
  }
  if (kept.length === 0) {
    return { count: 0, avgPhi: null, fractions: null };
  }
  const avg = kept.reduce((a, b) => a + b, 0) / kept.length;
  const fractions: Record<string, number> = {};
  for (const tau of thresholds) {
    fractions[String(tau)] = kept.filter((v) => v >= tau).length / kept.length;
  }
  return { count: kept.length, avgPhi: avg, fractions };
}

/** Per-token loss-weight factor; gamma and the weight are plain constants. */
export function weightOf(scheme: WeightScheme, logProb: number, phiClipped: number, tau?: number): number {
  switch (scheme) {
    case "sft":
      return 1;
    case "dft":
      return Math.exp(logProb);
    case "idft":
      return Math.exp(Math.exp(-phiClipped) * logProb);
    case "hard_truncate":
      if (tau === undefined) throw new RangeError("hard_truncate needs tau");
      return phiClipped > tau ? 1 : 0;
  }
}

export function idftWeightsBatch(
  phiClipped: number[][],
  logProbs: number[][],
  scheme: WeightScheme,
  options: WeightOptions = {},
): number[][] {
  assertAligned(phiClipped, logProbs, "idftWeightsBatch");
  assertMask(phiClipped, options.mask);
  const out: number[][] = [];
  for (let i = 0; i < phiClipped.length; i++) {
    const row: number[] = [];
    for (let j = 0; j < phiClipped[i].length; j++) {
      if (options.mask && !options.mask[i][j]) {
        row.push(0);
        continue;
      }
      row.push(weightOf(scheme, logProbs[i][j], phiClipped[i][j], options.tau));
    }
    out.push(row);
  }
  return out;
}

/** loss = -weight * logProb, zero where the weight is zero. */
export function lossBatch(weights: number[][], logProbs: number[][]): number[][] {
  assertAligned(weights, logProbs, "lossBatch");
  return weights.map((row, i) =>
    row.map((w, j) => (w === 0 ? 0 : -w * logProbs[i][j])),
  );
}

function logSumExpFinite(values: number[]): number {
  let max = -Infinity;
  for (const v of values) {
    if (Number.isFinite(v) && v > max) max = v;
  }
  if (max === -Infinity) return -Infinity;
  let sum = 0;
  for (const v of values) {
    if (Number.isFinite(v)) sum += Math.exp(v - max);
  }
  return max + Math.log(sum);
}

/**
 * Geometric log-space mixture per sequence: (1 - lam) * a + lam * b, then
 * renormalized to log-sum-exp zero. lam 0 and 1 return the input unchanged.
 */
export function fuseBatch(
  logPImitator: number[][],
  logPDrafter: number[][],
  lambdas: number[],
): number[][] {
  assertAligned(logPImitator, logPDrafter, "fuseBatch");
  if (lambdas.length !== logPImitator.length) {
    throw new RangeError(`lambdas length ${lambdas.length} != ${logPImitator.length}`);
  }
  const out: number[][] = [];
  for (let i = 0; i < logPImitator.length; i++) {
    const lam = lambdas[i];
    if (lam < 0 || lam > 1) throw new RangeError(`lambda out of [0, 1]: ${lam}`);
    if (lam === 0) {
      out.push([...logPImitator[i]]);
      continue;
    }
    if (lam === 1) {
      out.push([...logPDrafter[i]]);
      continue;
    }
    const mixed = logPImitator[i].map((a, j) => (1 - lam) * a + lam * logPDrafter[i][j]);
    const total = logSumExpFinite(mixed);
    out.push(mixed.map((v) => v - total));
  }
  return out;
}
