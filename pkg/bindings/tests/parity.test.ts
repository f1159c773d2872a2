/**
 * Cross-engine parity on the shared 100-sequence fixture corpus: every batch
 * operation must reproduce the primary engine's numbers to nine significant
 * digits, and the weight-JSONL writer must reproduce its bytes.
 */

import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import { describe, expect, it } from "vitest";

import { fuseBatch, idftWeightsBatch, lossBatch, phiBatch } from "../src/arrays.js";
import { formatG9, sigDigitsClose } from "../src/format.js";
import { parseWeightJsonl, readJsonl, serializeWeightRow } from "../src/jsonl.js";

const FIXTURES = join(dirname(fileURLToPath(import.meta.url)), "..", "fixtures");

interface BatchInputs {
  id: string;
  log_probs: number[];
  entropies: number[];
  mask: boolean[];
}

interface BatchExpected {
  id: string;
  phi: number[];
  phi_clipped: number[];
  gamma: number[];
  weight_idft: number[];
  weight_sft: number[];
  weight_dft: number[];
  weight_hard_truncate: number[];
  loss_idft: number[];
  tau: number;
  clip_bound: number;
}

interface FuseCase {
  id: string;
  log_p_imitator: number[];
  log_p_drafter: number[];
  lam: number;
  fused: number[];
}

function load<T>(name: string, reviveNegInf = false): T[] {
  return readJsonl<T>(readFileSync(join(FIXTURES, name), "utf-8"), reviveNegInf);
}

function expectAllClose(actual: number[], expected: number[], label: string): void {
  expect(actual.length).toBe(expected.length);
  for (let i = 0; i < actual.length; i++) {
    if (!sigDigitsClose(actual[i], expected[i], 9)) {
      throw new Error(
        `${label}[${i}]: ${actual[i]} vs ${expected[i]} beyond 9 significant digits`,
      );
    }
  }
}

describe("A13 binding parity on the shared corpus", () => {
  const inputs = load<BatchInputs>("batch_inputs.jsonl");
  const expected = load<BatchExpected>("batch_expected.jsonl");

  it("covers 100 sequences", () => {
    expect(inputs.length).toBe(100);
    expect(expected.length).toBe(100);
  });

  it("phiBatch reproduces phi and clipped phi", () => {
    for (let i = 0; i < inputs.length; i++) {
      const out = phiBatch(
        { logProbs: [inputs[i].log_probs], entropies: [inputs[i].entropies] },
        expected[i].clip_bound,
      );
      expectAllClose(out.phi[0], expected[i].phi, `${inputs[i].id} phi`);
      expectAllClose(out.phiClipped[0], expected[i].phi_clipped, `${inputs[i].id} phi_clipped`);
    }
  });

  it("idftWeightsBatch reproduces every scheme", () => {
    for (let i = 0; i < inputs.length; i++) {
      const clipped = [expected[i].phi_clipped];
      const lps = [inputs[i].log_probs];
      expectAllClose(
        idftWeightsBatch(clipped, lps, "idft")[0],
        expected[i].weight_idft,
        `${inputs[i].id} idft`,
      );
      expectAllClose(
        idftWeightsBatch(clipped, lps, "sft")[0],
        expected[i].weight_sft,
        `${inputs[i].id} sft`,
      );
      expectAllClose(
        idftWeightsBatch(clipped, lps, "dft")[0],
        expected[i].weight_dft,
        `${inputs[i].id} dft`,
      );
      expectAllClose(
        idftWeightsBatch(clipped, lps, "hard_truncate", { tau: expected[i].tau })[0],
        expected[i].weight_hard_truncate,
        `${inputs[i].id} hard_truncate`,
      );
      const losses = lossBatch(idftWeightsBatch(clipped, lps, "idft"), lps);
      expectAllClose(losses[0], expected[i].loss_idft, `${inputs[i].id} loss`);
    }
  });

  it("gamma in the export equals exp(-phi_clipped)", () => {
    for (let i = 0; i < expected.length; i++) {
      const gammas = expected[i].phi_clipped.map((pc) => Math.exp(-pc));
      expectAllClose(gammas, expected[i].gamma, `${expected[i].id} gamma`);
    }
  });

  it("fuseBatch reproduces fused log probs", () => {
    const cases = load<FuseCase>("fuse_cases.jsonl", true);
    expect(cases.length).toBe(100);
    for (const c of cases) {
      const fused = fuseBatch([c.log_p_imitator], [c.log_p_drafter], [c.lam])[0];
      expectAllClose(fused, c.fused, `${c.id} fused`);
    }
  });
});

describe("weight JSONL interface", () => {
  const text = readFileSync(join(FIXTURES, "weights_export.jsonl"), "utf-8");
  const rows = parseWeightJsonl(text);
  const lines = text.split("\n").filter((l) => l.trim().length > 0);

  it("parses the full export", () => {
    expect(rows.length).toBe(100);
    for (const row of rows) {
      expect(row.tokenIds.length).toBe(row.logProbs.length);
      expect(row.phi.length).toBe(row.logProbs.length);
    }
  });

  it("serializer reproduces the engine's bytes", () => {
    for (let i = 0; i < rows.length; i++) {
      expect(serializeWeightRow(rows[i])).toBe(lines[i]);
    }
  });

  it("weights recompute from the exported inputs at 9 digits", () => {
    for (const row of rows) {
      const clipped = [row.phi.map((v) => Math.min(Math.max(v, -10), 10))];
      const weights = idftWeightsBatch(clipped, [row.logProbs], "idft")[0];
      for (let j = 0; j < weights.length; j++) {
        // inputs themselves are rounded to 9 digits, so allow one digit less
        expect(sigDigitsClose(weights[j], row.weight[j], 8)).toBe(true);
      }
    }
  });

  it("formatG9 matches the engine's number style", () => {
    expect(formatG9(0.5)).toBe("0.5");
    expect(formatG9(1 / 3)).toBe("0.333333333");
    expect(formatG9(1e-5)).toBe("1e-05");
    expect(formatG9(1234567891)).toBe("1.23456789e+09");
    expect(formatG9(-0)).toBe("-0");
    expect(formatG9(0)).toBe("0");
  });
});
