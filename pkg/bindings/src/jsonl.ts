/**
 * Readers and a writer for the engine's weight-export JSONL: one object per
 * sequence with fixed key order {id, token_ids, log_probs, phi, gamma,
 * weight, loss} and all floats at nine significant digits.
 */

import { formatG9 } from "./format.js";

export interface WeightRow {
  id: string;
  tokenIds: number[];
  logProbs: number[];
  phi: number[];
  gamma: number[];
  weight: number[];
  loss: number[];
}

export function parseWeightLine(line: string): WeightRow {
  const obj = JSON.parse(line);
  for (const key of ["id", "token_ids", "log_probs", "phi", "gamma", "weight", "loss"]) {
    if (!(key in obj)) throw new RangeError(`weight row missing key ${key}`);
  }
  return {
    id: obj.id,
    tokenIds: obj.token_ids,
    logProbs: obj.log_probs,
    phi: obj.phi,
    gamma: obj.gamma,
    weight: obj.weight,
    loss: obj.loss,
  };
}

export function parseWeightJsonl(text: string): WeightRow[] {
  return text
    .split("\n")
    .filter((line) => line.trim().length > 0)
    .map(parseWeightLine);
}

export function serializeWeightRow(row: WeightRow): string {
  const nums = (values: number[]) => values.map(formatG9).join(", ");
  const ids = row.tokenIds.map((t) => String(t)).join(", ");
  return (
    `{"id": ${JSON.stringify(row.id)}, "token_ids": [${ids}], ` +
    `"log_probs": [${nums(row.logProbs)}], "phi": [${nums(row.phi)}], ` +
    `"gamma": [${nums(row.gamma)}], "weight": [${nums(row.weight)}], ` +
    `"loss": [${nums(row.loss)}]}`
  );
}

export function serializeWeightJsonl(rows: WeightRow[]): string {
  return rows.map(serializeWeightRow).join("\n") + "\n";
}

/** Generic JSONL reader; JSON null stands in for -Infinity in log-prob arrays. */
export function readJsonl<T>(text: string, reviveNegInf = false): T[] {
  const rows = text
    .split("\n")
    .filter((line) => line.trim().length > 0)
    .map((line) => JSON.parse(line));
  if (!reviveNegInf) return rows as T[];
  const revive = (value: unknown): unknown => {
    if (value === null) return -Infinity;
    if (Array.isArray(value)) return value.map(revive);
    if (typeof value === "object" && value !== null) {
      const out: Record<string, unknown> = {};
      for (const [k, v] of Object.entries(value)) out[k] = revive(v);
      return out;
    }
    return value;
  };
  return rows.map(revive) as T[];
}
