"""Per-token loss weights for fine-tuning loops.

All schemes fit the template loss = -w * log p per token.  The adaptive
scheme sets w = p^gamma with gamma = exp(-clipped phi), so a token in
statistical equilibrium (phi = 0) gets the probability-weighted loss
-p * log p, out-of-distribution tokens (phi << 0, gamma > 1) are suppressed,
and confidently in-distribution tokens (phi > 0, gamma < 1) are amplified.
The weight factor is a constant with respect to model parameters: consumers
multiply their cross-entropy gradient by gradient_scale, never differentiate
through it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import IO, Sequence

from .errors import EmptySequence, InvalidArgument
from .stats import DEFAULT_CLIP_BOUND, LOG_PROB_FLOOR, SequenceScore

SCHEMES = ("sft", "dft", "idft", "hard_truncate")


@dataclass(frozen=True)
class WeightConfig:
    scheme: str = "idft"
    clip_bound: float = DEFAULT_CLIP_BOUND
    logprob_floor: float = LOG_PROB_FLOOR
    tau: float | None = None  # hard_truncate keeps tokens with phi_clipped > tau

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise InvalidArgument(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.clip_bound <= 0:
            raise InvalidArgument("clip_bound must be > 0")
        if self.scheme == "hard_truncate" and self.tau is None:
            raise InvalidArgument("hard_truncate needs tau")


@dataclass(frozen=True)
class TokenWeightRecord:
    log_prob: float
    phi_clipped: float
    gamma: float
    weight: float
    loss: float


def gamma_of_phi(phi_clipped: float) -> float:
    """Modulation coefficient exp(-phi); 1 at equilibrium, bounded by the
    clip range of its input."""
    return math.exp(-phi_clipped)


def idft_token_loss(log_prob: float, gamma: float) -> float:
    """-p^gamma * log p, evaluated in log space so tiny p^gamma never
    underflows through an intermediate."""
    if gamma <= 0:
        raise InvalidArgument("gamma must be > 0")
    if log_prob > 0:
        raise InvalidArgument("log_prob must be <= 0")
    if log_prob == 0.0:
        return 0.0
    return math.exp(gamma * log_prob + math.log(-log_prob))


def gradient_scale(scheme: str, log_prob: float, phi_clipped: float, tau: float | None = None) -> float:
    """Multiplier on the standard cross-entropy gradient for one token.

    sft: 1; dft: p; idft: p^gamma with gamma = exp(-phi_clipped);
    hard_truncate: 1 if phi_clipped > tau else 0.  The returned factor is
    detached: no gradient flows through gamma or the p^gamma weight.
    """
    if scheme == "sft":
        return 1.0
    if scheme == "dft":
        return math.exp(log_prob)
    if scheme == "idft":
        return math.exp(gamma_of_phi(phi_clipped) * log_prob)
    if scheme == "hard_truncate":
        if tau is None:
            raise InvalidArgument("hard_truncate needs tau")
        return 1.0 if phi_clipped > tau else 0.0
    raise InvalidArgument(f"unknown scheme {scheme!r}")


def weight_stream(scored_sequence: SequenceScore, config: WeightConfig) -> list[TokenWeightRecord]:
    """One weight record per scored token, scheme applied uniformly."""
    out = []
    for rec in scored_sequence.records:
        lp = max(rec.log_prob, config.logprob_floor)
        gamma = gamma_of_phi(rec.phi_clipped)
        weight = gradient_scale(config.scheme, lp, rec.phi_clipped, config.tau)
        loss = 0.0 if weight == 0.0 else -weight * lp
        out.append(
            TokenWeightRecord(
                log_prob=lp,
                phi_clipped=rec.phi_clipped,
                gamma=gamma,
                weight=weight,
                loss=loss,
            )
        )
    return out


def sequence_loss(records: Sequence[TokenWeightRecord], mask: Sequence[bool] | None = None) -> float:
    """Mean token loss over unmasked positions."""
    if not records:
        raise EmptySequence("no weight records")
    if mask is not None:
        if len(mask) != len(records):
            raise InvalidArgument("mask length must match records")
        kept = [r.loss for r, m in zip(records, mask) if m]
    else:
        kept = [r.loss for r in records]
    if not kept:
        raise EmptySequence("all positions masked")
    return sum(kept) / len(kept)


# ---------------------------------------------------------------------------
# Export format: one JSON object per sequence, fixed key order, 9 significant
# digits on every float.


def _fmt(x: float) -> str:
    return format(float(x), ".9g")


def weight_export_line(
    seq_id: str,
    token_ids: Sequence[int],
    log_probs: Sequence[float],
    phis: Sequence[float],
    records: Sequence[TokenWeightRecord],
) -> str:
    cols = {
        "token_ids": ", ".join(str(int(t)) for t in token_ids),
        "log_probs": ", ".join(_fmt(x) for x in log_probs),
        "phi": ", ".join(_fmt(x) for x in phis),
        "gamma": ", ".join(_fmt(r.gamma) for r in records),
        "weight": ", ".join(_fmt(r.weight) for r in records),
        "loss": ", ".join(_fmt(r.loss) for r in records),
    }
    body = ", ".join(f'"{k}": [{v}]' for k, v in cols.items())
    return f'{{"id": {json.dumps(seq_id)}, {body}}}'


def write_weight_jsonl(fh: IO[str], rows: Sequence[tuple]) -> None:
    """rows: (seq_id, token_ids, log_probs, phis, records) tuples."""
    for seq_id, token_ids, log_probs, phis, records in rows:
        fh.write(weight_export_line(seq_id, token_ids, log_probs, phis, records))
        fh.write("\n")
