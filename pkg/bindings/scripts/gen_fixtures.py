"""Generate the shared parity fixtures from the primary engine.

Produces, for a 100-sequence corpus of real scored rollouts:
  batch_inputs.jsonl    per-sequence log_probs / entropies / mask (full precision)
  batch_expected.jsonl  phi, clipped phi, gamma, and per-scheme weights/losses
  fuse_cases.jsonl      imitator/drafter log-prob vectors, lambda, fused output
  weights_export.jsonl  the engine's actual weight export (9-significant-digit JSONL)

Run from the repository root:  python bindings/scripts/gen_fixtures.py
"""

from __future__ import annotations

import json
import os

import numpy as np

from cllkit.decoding import fuse_logprobs, plain_decode
from cllkit.pipeline import score_text
from cllkit.providers import SamplerConfig, derive_rng
from cllkit.stats import DiscriminantConfig, TokenDistribution, classify_sequence
from cllkit.weighting import WeightConfig, weight_stream, write_weight_jsonl
from cllkit.worlds import build_arith_world

OUT_DIR = os.path.join(os.path.dirname(__file__), "..", "fixtures")
CLIP = 10.0
TAU = -5.0
N_SEQUENCES = 100


def main() -> None:
    world = build_arith_world(n_items=50, solvable_fraction=0.6, seed=7)
    provider = world.provider
    tok = provider.tokenizer
    os.makedirs(OUT_DIR, exist_ok=True)

    inputs, expected, export_rows = [], [], []
    disc = DiscriminantConfig(alpha=0.01, clip_bound=CLIP)
    for i in range(N_SEQUENCES):
        item = world.items[i % len(world.items)]
        rng = derive_rng(4242, "fixture-roll", i)
        tokens, _ = plain_decode(
            provider, tok.encode(item.question), SamplerConfig(), rng, world.config.max_len
        )
        response = tok.decode(tokens)
        records = score_text(provider, item.question, response, CLIP)
        seq = classify_sequence(records, disc)
        row = {
            "id": f"seq-{i:03d}",
            "log_probs": [r.log_prob for r in records],
            "entropies": [r.entropy for r in records],
            "mask": [True] * len(records),
        }
        inputs.append(row)
        schemes = {
            name: weight_stream(seq, WeightConfig(scheme=name, clip_bound=CLIP, tau=TAU))
            for name in ("idft", "sft", "dft", "hard_truncate")
        }
        expected.append(
            {
                "id": row["id"],
                "phi": [r.phi for r in records],
                "phi_clipped": [r.phi_clipped for r in records],
                "gamma": [w.gamma for w in schemes["idft"]],
                "weight_idft": [w.weight for w in schemes["idft"]],
                "weight_sft": [w.weight for w in schemes["sft"]],
                "weight_dft": [w.weight for w in schemes["dft"]],
                "weight_hard_truncate": [w.weight for w in schemes["hard_truncate"]],
                "loss_idft": [w.loss for w in schemes["idft"]],
                "tau": TAU,
                "clip_bound": CLIP,
            }
        )
        export_rows.append(
            (
                row["id"],
                tok.encode(response),
                [r.log_prob for r in records],
                [r.phi for r in records],
                schemes["idft"],
            )
        )

    fuse_cases = []
    rng = derive_rng(4242, "fixture-fuse")
    for i in range(N_SEQUENCES):
        item = world.items[i % len(world.items)]
        ctx_a = tok.encode(item.question)
        shadow = world.config.shadow_prompt.format(
            question=item.question, answer=item.reference_answer
        )
        ctx_b = tok.encode(shadow)
        depth = int(rng.integers(0, 6))
        extra = tok.encode("i think"[: depth + 1])
        da = provider.next_distribution(ctx_a + extra)
        db = provider.next_distribution(ctx_b + extra)
        lam = float(rng.random())
        fused = fuse_logprobs(da, db, lam)

        def clean(values):
            # exact zeros carry -inf log probs; JSON has no Infinity, so
            # null stands in for them on the wire
            return [v if np.isfinite(v) else None for v in values]

        fuse_cases.append(
            {
                "id": f"fuse-{i:03d}",
                "log_p_imitator": clean(da.log_probs.tolist()),
                "log_p_drafter": clean(db.log_probs.tolist()),
                "lam": lam,
                "fused": clean(fused.log_probs.tolist()),
            }
        )

    def dump(name: str, rows) -> None:
        with open(os.path.join(OUT_DIR, name), "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row))
                fh.write("\n")

    dump("batch_inputs.jsonl", inputs)
    dump("batch_expected.jsonl", expected)
    dump("fuse_cases.jsonl", fuse_cases)
    with open(os.path.join(OUT_DIR, "weights_export.jsonl"), "w", encoding="utf-8") as fh:
        write_weight_jsonl(fh, export_rows)
    print(f"wrote 4 fixture files to {os.path.abspath(OUT_DIR)}")


if __name__ == "__main__":
    main()
