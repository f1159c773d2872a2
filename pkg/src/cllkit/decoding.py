"""Dual-stream guided decoding.

Two contexts run over the same provider: an answer-aware imitator context
(shadow prompt + question + answer + an absorbed analysis passage) and a
question-only drafter context.  Each step geometrically mixes their log
distributions with a weight lambda driven by the imitator's normalized
entropy, so the drafter's own style wins wherever the imitator is uncertain
and the imitator steers the critical low-entropy tokens.  A configurable
splitter sequence (the answer delimiter) switches decoding to drafter-only
once it appears; an EOS sampled before the splitter is replaced by the
splitter itself so every finished sequence contains a well-formed answer
region whose content the drafter produced unaided.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AnalysisOverrun,
    InvalidArgument,
    InvalidState,
    SupportMismatch,
)
from .providers import ContextState, Provider, SamplerConfig, derive_rng, sample
from .stats import TokenDistribution, entropy

SCHEDULE_MODES = ("linear", "sigmoid", "piecewise", "constant")

DEFAULT_SHADOW_PROMPT = (
    "You are shown a question together with a final answer that is known to be "
    "correct. Work out, in your own words, the reasoning that arrives at that "
    "answer. Write an '# Analyze' section that inspects the given answer first, "
    "then a '# CoT' section holding only the standalone reasoning; the reasoning "
    "must never mention that an answer was provided.\n"
    "# Question\n{question}\n# Answer\n{answer}\n"
)


@dataclass(frozen=True)
class MixSchedule:
    """Mapping from normalized imitator entropy to the mixing weight.

    linear: clamp(beta * h, 0, 1); sigmoid: 1 / (1 + exp(-beta * (h - c)));
    piecewise: clamp((h - h1) / (h2 - h1), 0, 1); constant: a fixed value
    (the constant-weight ablation, and beta-independent endpoints).
    """

    mode: str = "linear"
    beta: float = 10.0
    c: float = 0.1
    h1: float = 0.02
    h2: float = 0.2
    value: float = 0.5

    def __post_init__(self) -> None:
        if self.mode not in SCHEDULE_MODES:
            raise InvalidArgument(f"mode must be one of {SCHEDULE_MODES}")
        if self.beta < 0:
            raise InvalidArgument("beta must be >= 0")
        if self.mode == "sigmoid" and not 0.0 <= self.c <= 1.0:
            raise InvalidArgument("sigmoid center c must be in [0, 1]")
        if self.mode == "piecewise" and not 0.0 <= self.h1 < self.h2 <= 1.0:
            raise InvalidArgument("piecewise needs 0 <= h1 < h2 <= 1")
        if self.mode == "constant" and not 0.0 <= self.value <= 1.0:
            raise InvalidArgument("constant value must be in [0, 1]")


def lambda_of(schedule: MixSchedule, normalized_entropy: float) -> float:
    """Mixing weight in [0, 1]; non-decreasing in the entropy argument."""
    h = normalized_entropy
    if not 0.0 <= h <= 1.0:
        raise InvalidArgument(f"normalized entropy must be in [0, 1], got {h}")
    if schedule.mode == "linear":
        return min(max(schedule.beta * h, 0.0), 1.0)
    if schedule.mode == "sigmoid":
        return 1.0 / (1.0 + math.exp(-schedule.beta * (h - schedule.c)))
    if schedule.mode == "piecewise":
        return min(max((h - schedule.h1) / (schedule.h2 - schedule.h1), 0.0), 1.0)
    return schedule.value


def fuse_logprobs(
    imitator: TokenDistribution,
    drafter: TokenDistribution,
    lam: float,
) -> TokenDistribution:
    """Geometric mixture in log space, renormalized:
    (1 - lam) * log p_imitator + lam * log p_drafter.

    lam = 0 and lam = 1 return the respective input exactly.  Truncated
    inputs are fused over the union of their listed tokens, with each
    stream's tail-uniform estimate standing in for tokens it did not list.
    """
    if not 0.0 <= lam <= 1.0:
        raise InvalidArgument("lambda must be in [0, 1]")
    if imitator.vocab_size != drafter.vocab_size:
        raise SupportMismatch("streams must share a vocabulary")
    if lam == 0.0:
        return imitator
    if lam == 1.0:
        return drafter
    if imitator.is_full and drafter.is_full:
        mixed = (1.0 - lam) * imitator.log_probs + lam * drafter.log_probs
        finite = mixed[np.isfinite(mixed)]
        m = float(np.max(finite))
        total = m + math.log(float(np.sum(np.exp(finite - m))))
        return TokenDistribution(log_probs=mixed - total, vocab_size=imitator.vocab_size)

    def listed(dist: TokenDistribution) -> dict[int, float]:
        if dist.is_full:
            return {i: float(lp) for i, lp in enumerate(dist.log_probs)}
        return {int(i): float(lp) for i, lp in zip(dist.token_ids, dist.log_probs)}

    def tail_estimate(dist: TokenDistribution) -> float:
        if dist.is_full or dist.tail_token_count == 0:
            return -math.inf
        return dist.tail_log_mass - math.log(dist.tail_token_count)

    a, b = listed(imitator), listed(drafter)
    if not (set(a) & set(b)):
        raise SupportMismatch("truncated supports are disjoint")
    union = sorted(set(a) | set(b))
    ta, tb = tail_estimate(imitator), tail_estimate(drafter)
    mixed = np.array(
        [(1.0 - lam) * a.get(i, ta) + lam * b.get(i, tb) for i in union], dtype=np.float64
    )
    finite = mixed[np.isfinite(mixed)]
    m = float(np.max(finite))
    total = m + math.log(float(np.sum(np.exp(finite - m))))
    return TokenDistribution(
        log_probs=mixed - total,
        vocab_size=imitator.vocab_size,
        token_ids=np.asarray(union),
        tail_token_count=imitator.vocab_size - len(union),
        tail_log_mass=-math.inf,
    )


# ---------------------------------------------------------------------------
# Splitter detection


class SplitterMatcher:
    """Incremental detector for the splitter ending at the stream tip.

    Knuth-Morris-Pratt automaton: O(1) amortized work per fed token; ``seen``
    latches once the full pattern has occurred anywhere.
    """

    def __init__(self, pattern: list[int]):
        if not pattern:
            raise InvalidArgument("splitter must be nonempty")
        self.pattern = list(pattern)
        fail = [0] * len(pattern)
        k = 0
        for i in range(1, len(pattern)):
            while k > 0 and pattern[i] != pattern[k]:
                k = fail[k - 1]
            if pattern[i] == pattern[k]:
                k += 1
            fail[i] = k
        self._fail = fail
        self._state = 0
        self.seen = False

    def feed(self, token: int) -> bool:
        """Advance by one token; True iff the pattern ends at this token."""
        while self._state > 0 and token != self.pattern[self._state]:
            self._state = self._fail[self._state - 1]
        if token == self.pattern[self._state]:
            self._state += 1
        if self._state == len(self.pattern):
            self.seen = True
            self._state = self._fail[self._state - 1]
            return True
        return False


def detect_splitter(generated: list[int], splitter: list[int]) -> bool:
    """True iff the splitter occurs ending exactly at the last position."""
    matcher = SplitterMatcher(splitter)
    hit = False
    for token in generated:
        hit = matcher.feed(token)
    return hit


# ---------------------------------------------------------------------------
# Session state and configuration


@dataclass(frozen=True)
class HintedConfig:
    schedule: MixSchedule = field(default_factory=MixSchedule)
    shadow_prompt: str = DEFAULT_SHADOW_PROMPT
    boundary_marker: str = "# CoT"
    splitter: str = "\\boxed{"
    eos_id: int | None = None  # None: use the provider's
    max_len: int = 256
    analysis_max_tokens: int = 1024
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    analysis_sampler: SamplerConfig = field(default_factory=SamplerConfig)

    def __post_init__(self) -> None:
        if not self.splitter:
            raise InvalidArgument("splitter must be nonempty")
        if self.max_len < 1:
            raise InvalidArgument("max_len must be >= 1")
        if self.analysis_max_tokens < 1:
            raise InvalidArgument("analysis_max_tokens must be >= 1")


@dataclass(frozen=True)
class TraceRecord:
    entropy_target: float
    normalized_entropy: float
    lam: float
    mode: str  # mixed | drafter_only | forced
    token: int
    fused_log_prob_of_token: float


@dataclass
class DecodeSession:
    """Single-owner state of one in-flight decode."""

    target_ctx: ContextState
    drafter_ctx: ContextState
    splitter_ids: list[int]
    eos_id: int
    max_len: int
    generated: list[int] = field(default_factory=list)
    drafter_only: bool = False
    forced_queue: list[int] = field(default_factory=list)
    step_count: int = 0
    finished: bool = False
    truncated: bool = False
    matcher: SplitterMatcher | None = None

    def __post_init__(self) -> None:
        if self.matcher is None:
            self.matcher = SplitterMatcher(self.splitter_ids)
        if self.eos_id in self.splitter_ids:
            raise InvalidArgument("splitter must not contain the EOS token")


def prepare_target_context(
    question: str,
    answer: str,
    config: HintedConfig,
    provider: Provider,
    rng: np.random.Generator,
) -> list[int]:
    """Build the answer-aware context: shadow prompt plus a sampled analysis
    passage truncated at the first boundary marker, marker included.

    Raises AnalysisOverrun when the marker never appears within the cap.
    """
    if not question or not answer:
        raise InvalidArgument("question and answer must be nonempty")
    tok = provider.tokenizer
    prompt_ids = tok.encode(config.shadow_prompt.format(question=question, answer=answer))
    marker = SplitterMatcher(tok.encode(config.boundary_marker))
    ctx = list(prompt_ids)
    eos_id = config.eos_id if config.eos_id is not None else provider.eos_id
    for _ in range(config.analysis_max_tokens):
        dist = provider.next_distribution(ctx)
        token = sample(dist, config.analysis_sampler, rng)
        if token == eos_id:
            raise AnalysisOverrun("analysis ended before the boundary marker")
        ctx.append(token)
        if marker.feed(token):
            return ctx
    raise AnalysisOverrun("boundary marker not generated within the analysis cap")


def start_session(
    question: str,
    answer: str,
    config: HintedConfig,
    provider: Provider,
    rng: np.random.Generator,
) -> DecodeSession:
    target_ids = prepare_target_context(question, answer, config, provider, rng)
    tok = provider.tokenizer
    eos_id = config.eos_id if config.eos_id is not None else provider.eos_id
    return DecodeSession(
        target_ctx=ContextState(target_ids),
        drafter_ctx=ContextState(tok.encode(question)),
        splitter_ids=tok.encode(config.splitter),
        eos_id=eos_id,
        max_len=config.max_len,
    )


def step(
    session: DecodeSession,
    config: HintedConfig,
    provider: Provider,
    rng: np.random.Generator,
) -> tuple[int, TraceRecord, bool]:
    """Advance one token.  Emission order: forced splitter tokens first, then
    drafter-only sampling once the splitter has appeared, otherwise the fused
    two-stream draw.  The emitted token is synced to both contexts.
    """
    if session.finished:
        raise InvalidState("session already finished")
    session.step_count += 1
    log_v = math.log(provider.vocab_size)

    if session.forced_queue:
        emitted = session.forced_queue.pop(0)
        record = TraceRecord(0.0, 0.0, 1.0, "forced", emitted, 0.0)
    else:
        if session.drafter_only:
            dist = provider.next_distribution(session.drafter_ctx.token_ids)
            ent = entropy(dist)
            nent = min(max(ent / log_v, 0.0), 1.0)
            lam = 1.0
            mode = "drafter_only"
        else:
            target_dist = provider.next_distribution(session.target_ctx.token_ids)
            drafter_dist = provider.next_distribution(session.drafter_ctx.token_ids)
            ent = entropy(target_dist)
            nent = min(max(ent / log_v, 0.0), 1.0)
            lam = lambda_of(config.schedule, nent)
            dist = fuse_logprobs(target_dist, drafter_dist, lam)
            mode = "mixed"
        sampled = sample(dist, config.sampler, rng)
        if sampled == session.eos_id and not session.matcher.seen:
            # EOS before the splitter: force the splitter instead so the
            # answer region always exists, then hand over to the drafter.
            emitted = session.splitter_ids[0]
            session.forced_queue = list(session.splitter_ids[1:])
            session.drafter_only = True
            record = TraceRecord(0.0, 0.0, 1.0, "forced", emitted, 0.0)
        elif sampled == session.eos_id:
            session.finished = True
            record = TraceRecord(ent, nent, lam, mode, sampled, dist.log_prob_of(sampled))
            return sampled, record, True
        else:
            emitted = sampled
            record = TraceRecord(ent, nent, lam, mode, emitted, dist.log_prob_of(emitted))

    session.generated.append(emitted)
    session.target_ctx.append(emitted)
    session.drafter_ctx.append(emitted)
    if session.matcher.feed(emitted):
        session.drafter_only = True
    if len(session.generated) >= session.max_len:
        session.finished = True
        session.truncated = True
    return emitted, record, session.finished


@dataclass(frozen=True)
class DecodeResult:
    token_ids: tuple[int, ...]
    text: str
    trace: tuple[TraceRecord, ...]
    truncated: bool


def decode(
    question: str,
    answer: str,
    config: HintedConfig,
    provider: Provider,
    seed: int,
) -> DecodeResult:
    """Full guided decode: prepare the answer-aware context, then step until
    EOS (after the splitter) or the length cap."""
    session = start_session(
        question, answer, config, provider, derive_rng(seed, "analysis")
    )
    rng = derive_rng(seed, "decode")
    trace: list[TraceRecord] = []
    while not session.finished:
        _, record, _ = step(session, config, provider, rng)
        trace.append(record)
    return DecodeResult(
        token_ids=tuple(session.generated),
        text=provider.tokenizer.decode(session.generated),
        trace=tuple(trace),
        truncated=session.truncated,
    )


def plain_decode(
    provider: Provider,
    context_ids: list[int],
    sampler: SamplerConfig,
    rng: np.random.Generator,
    max_len: int,
    eos_id: int | None = None,
) -> tuple[list[int], bool]:
    """Single-stream sampling from the provider until EOS or the cap; returns
    (tokens, truncated).  EOS is not included in the output."""
    eos = eos_id if eos_id is not None else provider.eos_id
    ctx = list(context_ids)
    out: list[int] = []
    for _ in range(max_len):
        dist = provider.next_distribution(ctx)
        token = sample(dist, sampler, rng)
        if token == eos:
            return out, False
        out.append(token)
        ctx.append(token)
    return out, True
