"""Corpus operations: score datasets against a provider, verify answers,
realign corpora via rollout-then-guided-decoding, and export training
weights.

Items are processed in parallel with per-item derived RNG streams, so output
bytes depend only on (corpus, provider, seeds), never on scheduling.  Output
JSONL preserves input order; dropped items go to a sidecar so corpora stay
clean.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np

from .decoding import HintedConfig, decode, plain_decode
from .errors import InvalidArgument, ProtocolError
from .providers import Provider, RemoteProvider, SamplerConfig, derive_rng, derive_seed
from .stats import (
    DiscriminantConfig,
    PhiRecord,
    SequenceScore,
    classify_sequence,
    extreme_token_report,
    phi,
)
from .weighting import TokenWeightRecord, WeightConfig, weight_stream


@dataclass(frozen=True)
class DatasetItem:
    id: str
    question: str
    reference_answer: str

    def __post_init__(self) -> None:
        if not self.question:
            raise InvalidArgument(f"item {self.id!r} has an empty question")


@dataclass(frozen=True)
class RealignedItem:
    id: str
    question: str
    response: str
    source: str  # rollout | hinted
    verified: bool
    phi_summary: dict


@dataclass(frozen=True)
class VerifierSpec:
    kind: str = "boxed_exact"  # boxed_exact | normalized_match
    lowercase: bool = True
    collapse_whitespace: bool = True

    def __post_init__(self) -> None:
        if self.kind not in ("boxed_exact", "normalized_match"):
            raise InvalidArgument(f"unknown verifier kind {self.kind!r}")


def _normalize(text: str, spec: VerifierSpec) -> str:
    out = text.strip()
    if spec.collapse_whitespace:
        out = " ".join(out.split())
    if spec.lowercase:
        out = out.lower()
    return out


def extract_last_boxed(text: str) -> str | None:
    """Content of the last ``\\boxed{...}`` span, brace-balance aware."""
    marker = "\\boxed{"
    start = text.rfind(marker)
    if start < 0:
        return None
    depth = 1
    i = start + len(marker)
    out = []
    while i < len(text) and depth > 0:
        c = text[i]
        if c == "{":
            depth += 1
        elif c == "}":
            depth -= 1
            if depth == 0:
                break
        out.append(c)
        i += 1
    if depth != 0:
        return None
    return "".join(out)


def verify(response: str, reference_answer: str, spec: VerifierSpec) -> bool:
    if spec.kind == "boxed_exact":
        boxed = extract_last_boxed(response)
        if boxed is None:
            return False
        return _normalize(boxed, spec) == _normalize(reference_answer, spec)
    return _normalize(response, spec) == _normalize(reference_answer, spec)


# ---------------------------------------------------------------------------
# Corpus I/O


def read_corpus(path: str) -> list[DatasetItem]:
    items: list[DatasetItem] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            item_id = str(obj["id"])
            if item_id in seen:
                raise InvalidArgument(f"duplicate id {item_id!r} at line {lineno}")
            seen.add(item_id)
            items.append(
                DatasetItem(
                    id=item_id,
                    question=obj["question"],
                    reference_answer=obj.get("answer", obj.get("response", "")),
                )
            )
    return items


def write_corpus(items: Sequence[DatasetItem], fh: IO[str]) -> None:
    for item in items:
        fh.write(
            json.dumps(
                {"id": item.id, "question": item.question, "answer": item.reference_answer}
            )
        )
        fh.write("\n")


def _fmt(x: float) -> str:
    return format(float(x), ".9g")


def _threshold_key(tau: float) -> str:
    return format(tau, "g")


# ---------------------------------------------------------------------------
# Scoring


def score_text(provider: Provider, question: str, response: str, clip_bound: float) -> list[PhiRecord]:
    """Teacher-force the response tokens after the question context and score
    each one against the provider's next-token distribution."""
    tok = provider.tokenizer
    ctx = tok.encode(question)
    response_ids = tok.encode(response)
    records: list[PhiRecord] = []
    if isinstance(provider, RemoteProvider):
        full = question + response
        dists = provider.echo_distributions(full)[len(ctx):]
        if len(dists) != len(response_ids):
            raise ProtocolError(
                f"echo returned {len(dists)} positions for {len(response_ids)} response tokens"
            )
        for dist, token in zip(dists, response_ids):
            records.append(phi(dist, token, clip_bound))
        return records
    for token in response_ids:
        dist = provider.next_distribution(ctx)
        records.append(phi(dist, token, clip_bound))
        ctx.append(token)
    return records


@dataclass(frozen=True)
class ScoredItem:
    id: str
    score: SequenceScore | None
    error: str | None = None


@dataclass
class ScoreReport:
    items: int = 0
    failed: int = 0
    avg_phi: float = 0.0
    mean_s_clipped: float = 0.0
    verdicts: dict = field(default_factory=dict)
    fractions: dict = field(default_factory=dict)
    s_histogram: list = field(default_factory=list)
    phi_histogram: list = field(default_factory=list)


def _histogram(values: np.ndarray, bins: int = 20) -> list[tuple[float, float, int]]:
    if len(values) == 0:
        return []
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi - lo < 1e-12:
        return [(lo - 0.5, hi + 0.5, len(values))]
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    return [
        (float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(len(counts))
    ]


def score_dataset(
    items: Sequence[DatasetItem],
    provider: Provider,
    config: DiscriminantConfig,
    workers: int = 1,
) -> tuple[list[ScoredItem], ScoreReport]:
    def one(item: DatasetItem) -> ScoredItem:
        try:
            records = score_text(provider, item.question, item.reference_answer, config.clip_bound)
            return ScoredItem(id=item.id, score=classify_sequence(records, config))
        except Exception as exc:  # per-item failures never kill the run
            return ScoredItem(id=item.id, score=None, error=f"{type(exc).__name__}: {exc}")

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scored = list(pool.map(one, items))
    else:
        scored = [one(item) for item in items]

    report = ScoreReport()
    report.items = len(scored)
    all_phis: list[float] = []
    s_values: list[float] = []
    for s in scored:
        if s.score is None:
            report.failed += 1
            continue
        report.verdicts[s.score.verdict] = report.verdicts.get(s.score.verdict, 0) + 1
        all_phis.extend(r.phi for r in s.score.records)
        s_values.append(s.score.s_clipped_final)
    if all_phis:
        phis = np.asarray(all_phis)
        report.avg_phi = float(np.mean(phis))
        report.mean_s_clipped = float(np.mean(s_values))
        report.fractions = {
            _threshold_key(t): float(np.mean(phis >= t)) for t in config.report_thresholds
        }
        report.s_histogram = _histogram(np.asarray(s_values))
        report.phi_histogram = _histogram(phis)
    return scored, report


def write_scored_jsonl(fh: IO[str], scored: Sequence[ScoredItem], config: DiscriminantConfig) -> None:
    for s in scored:
        if s.score is None:
            continue
        frac = extreme_token_report(list(s.score.records), config.report_thresholds)
        frac_body = ", ".join(
            f'"{_threshold_key(t)}": {_fmt(frac.fractions[t])}' for t in config.report_thresholds
        )
        phis = ", ".join(_fmt(r.phi) for r in s.score.records)
        fh.write(
            f'{{"id": {json.dumps(s.id)}, "s_final": {_fmt(s.score.s_final)}, '
            f'"s_clipped_final": {_fmt(s.score.s_clipped_final)}, '
            f'"verdict": {json.dumps(s.score.verdict)}, '
            f'"avg_phi": {_fmt(frac.avg_phi)}, '
            f'"frac_ge": {{{frac_body}}}, "phi": [{phis}]}}\n'
        )


# ---------------------------------------------------------------------------
# Realignment


@dataclass(frozen=True)
class DroppedItem:
    id: str
    reason: str
    response: str = ""


@dataclass
class RealignReport:
    total: int = 0
    rollout: int = 0
    hinted: int = 0
    dropped: int = 0
    failed: int = 0
    per_source: dict = field(default_factory=dict)


def _phi_summary(records: list[PhiRecord], thresholds: tuple[float, ...]) -> dict:
    rep = extreme_token_report(records, thresholds)
    return {
        "avg_phi": rep.avg_phi,
        "fractions": {_threshold_key(t): rep.fractions[t] for t in thresholds},
        "s_clipped_final": float(sum(r.phi_clipped for r in records)),
    }


def realign(
    items: Sequence[DatasetItem],
    provider: Provider,
    hinted_config: HintedConfig,
    verifier: VerifierSpec,
    sampler: SamplerConfig,
    seed: int,
    workers: int = 1,
    rollouts: int = 1,
    discriminant: DiscriminantConfig | None = None,
) -> tuple[list[RealignedItem], list[DroppedItem], RealignReport]:
    """Rewrite a (question, answer) corpus into verified, model-aligned
    responses: sample a student rollout first, keep it when it verifies, and
    otherwise guided-decode with the answer in view, keeping the result only
    if it re-verifies (false positives drop out here)."""
    disc = discriminant or DiscriminantConfig(alpha=0.01)
    tok = provider.tokenizer

    def one(item: DatasetItem):
        try:
            rollout_text = None
            for attempt in range(max(1, rollouts)):
                rng = derive_rng(seed, "rollout", item.id, attempt)
                tokens, truncated = plain_decode(
                    provider, tok.encode(item.question), sampler, rng, hinted_config.max_len
                )
                text = tok.decode(tokens)
                if not truncated and verify(text, item.reference_answer, verifier):
                    rollout_text = text
                    break
            if rollout_text is not None:
                records = score_text(provider, item.question, rollout_text, disc.clip_bound)
                return RealignedItem(
                    id=item.id,
                    question=item.question,
                    response=rollout_text,
                    source="rollout",
                    verified=True,
                    phi_summary=_phi_summary(records, disc.report_thresholds),
                )
            result = decode(
                item.question,
                item.reference_answer,
                hinted_config,
                provider,
                seed=derive_seed(seed, "hinted", item.id),
            )
            if result.truncated or not verify(result.text, item.reference_answer, verifier):
                return DroppedItem(id=item.id, reason="hinted response failed verification",
                                   response=result.text)
            records = score_text(provider, item.question, result.text, disc.clip_bound)
            return RealignedItem(
                id=item.id,
                question=item.question,
                response=result.text,
                source="hinted",
                verified=True,
                phi_summary=_phi_summary(records, disc.report_thresholds),
            )
        except Exception as exc:
            return DroppedItem(id=item.id, reason=f"{type(exc).__name__}: {exc}")

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, items))
    else:
        results = [one(item) for item in items]

    realigned = [r for r in results if isinstance(r, RealignedItem)]
    dropped = [r for r in results if isinstance(r, DroppedItem)]
    report = RealignReport(total=len(items))
    for r in realigned:
        if r.source == "rollout":
            report.rollout += 1
        else:
            report.hinted += 1
    for d in dropped:
        if d.response:
            report.dropped += 1
        else:
            report.failed += 1
    for source in ("rollout", "hinted"):
        group = [r for r in realigned if r.source == source]
        if not group:
            continue
        avg = float(np.mean([r.phi_summary["avg_phi"] for r in group]))
        keys = group[0].phi_summary["fractions"].keys()
        fractions = {
            k: float(np.mean([r.phi_summary["fractions"][k] for r in group])) for k in keys
        }
        report.per_source[source] = {"count": len(group), "avg_phi": avg, "fractions": fractions}
    return realigned, dropped, report


def write_realigned_jsonl(fh: IO[str], items: Sequence[RealignedItem]) -> None:
    for item in items:
        fh.write(
            json.dumps(
                {
                    "id": item.id,
                    "question": item.question,
                    "response": item.response,
                    "source": item.source,
                    "verified": item.verified,
                }
            )
        )
        fh.write("\n")


def write_dropped_jsonl(fh: IO[str], dropped: Sequence[DroppedItem]) -> None:
    for d in dropped:
        fh.write(json.dumps({"id": d.id, "reason": d.reason, "response": d.response}))
        fh.write("\n")


# ---------------------------------------------------------------------------
# Weight export


def idft_export_rows(
    realigned: Sequence[RealignedItem],
    provider: Provider,
    weight_config: WeightConfig,
    workers: int = 1,
) -> list[tuple[str, list[int], list[float], list[float], list[TokenWeightRecord]]]:
    """Score each realigned response with teacher forcing and attach per-token
    training weights, in the weight-JSONL row layout."""
    if not realigned:
        raise InvalidArgument("realigned corpus is empty")
    disc = DiscriminantConfig(alpha=0.01, clip_bound=weight_config.clip_bound)

    def one(item: RealignedItem):
        records = score_text(provider, item.question, item.response, weight_config.clip_bound)
        seq = classify_sequence(records, disc)
        weights = weight_stream(seq, weight_config)
        token_ids = provider.tokenizer.encode(item.response)
        log_probs = [r.log_prob for r in records]
        phis = [r.phi for r in records]
        return (item.id, token_ids, log_probs, phis, weights)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, realigned))
    return [one(item) for item in realigned]


def read_realigned(path: str) -> list[RealignedItem]:
    out: list[RealignedItem] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            out.append(
                RealignedItem(
                    id=str(obj["id"]),
                    question=obj["question"],
                    response=obj["response"],
                    source=obj.get("source", "rollout"),
                    verified=bool(obj.get("verified", True)),
                    phi_summary={},
                )
            )
    return out


# ---------------------------------------------------------------------------
# Report serialization


def report_to_json(report) -> str:
    def default(obj):
        if isinstance(obj, (np.floating, np.integer)):
            return obj.item()
        return obj.__dict__

    return json.dumps(report, default=default, indent=2, sort_keys=True)


def write_histogram_csv(fh: IO[str], rows: Sequence[tuple[float, float, int]]) -> None:
    fh.write("bin_left,bin_right,count\n")
    for left, right, count in rows:
        fh.write(f"{_fmt(left)},{_fmt(right)},{count}\n")
