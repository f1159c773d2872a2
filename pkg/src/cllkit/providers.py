"""Next-token distribution sources and sampling utilities.

Three provider families cover desk-scale verification and real serving:
deterministic table providers (including scripted mixture-of-sequences
worlds), add-lambda smoothed n-gram models, and an HTTP client for a
completion-style endpoint that returns per-position top-N log probabilities.

Providers are immutable after construction and safe to share across threads.
Randomness is explicit: draws consume a counter-based Philox generator whose
key is derived by SHA-256 from (seed, labels...), so per-item streams are
reproducible regardless of scheduling order.
"""

from __future__ import annotations

import hashlib
import math
import os
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import httpx
import numpy as np

from .errors import (
    InvalidArgument,
    ProtocolError,
    ProviderUnavailable,
    TokenizationError,
)
from .stats import LOG_PROB_FLOOR, TokenDistribution

PAD_SENTINEL = -1  # left-padding marker in n-gram context keys; never emitted


# ---------------------------------------------------------------------------
# RNG streams


def derive_seed(seed: int, *labels) -> int:
    """128-bit stream key from a global seed and any hashable labels."""
    text = "|".join(str(x) for x in (seed, *labels))
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:16], "big")


def derive_rng(seed: int, *labels) -> np.random.Generator:
    """Philox generator keyed by derive_seed; bit-reproducible across runs."""
    return np.random.Generator(np.random.Philox(key=derive_seed(seed, *labels)))


# ---------------------------------------------------------------------------
# Tokenizers


class CharTokenizer:
    """Character-level tokenizer over a fixed alphabet plus a reserved EOS."""

    EOS = "<eos>"

    def __init__(self, alphabet: Iterable[str]):
        chars = sorted(set(alphabet))
        if any(len(c) != 1 for c in chars):
            raise InvalidArgument("alphabet entries must be single characters")
        self._chars = chars
        self._ids = {c: i for i, c in enumerate(chars)}
        self.eos_id = len(chars)
        self.vocab_size = len(chars) + 1

    @classmethod
    def from_corpus(cls, texts: Iterable[str]) -> "CharTokenizer":
        return cls({c for t in texts for c in t})

    @property
    def mode(self) -> str:
        return "char"

    @property
    def units(self) -> list[str]:
        return list(self._chars)

    def encode(self, text: str) -> list[int]:
        try:
            return [self._ids[c] for c in text]
        except KeyError as exc:
            raise TokenizationError(f"unknown character {exc.args[0]!r}") from exc

    def decode(self, ids: Sequence[int]) -> str:
        return "".join(self._chars[i] for i in ids if i != self.eos_id)

    def token_text(self, token_id: int) -> str:
        return self.EOS if token_id == self.eos_id else self._chars[token_id]


class WhitespaceTokenizer:
    """Word-level tokenizer over a fixed vocabulary plus a reserved EOS."""

    EOS = "<eos>"

    def __init__(self, words: Iterable[str]):
        vocab = sorted(set(words))
        self._words = vocab
        self._ids = {w: i for i, w in enumerate(vocab)}
        self.eos_id = len(vocab)
        self.vocab_size = len(vocab) + 1

    @classmethod
    def from_corpus(cls, texts: Iterable[str]) -> "WhitespaceTokenizer":
        return cls({w for t in texts for w in t.split()})

    @property
    def mode(self) -> str:
        return "whitespace"

    @property
    def units(self) -> list[str]:
        return list(self._words)

    def encode(self, text: str) -> list[int]:
        try:
            return [self._ids[w] for w in text.split()]
        except KeyError as exc:
            raise TokenizationError(f"unknown word {exc.args[0]!r}") from exc

    def decode(self, ids: Sequence[int]) -> str:
        return " ".join(self._words[i] for i in ids if i != self.eos_id)

    def token_text(self, token_id: int) -> str:
        return self.EOS if token_id == self.eos_id else self._words[token_id]


# ---------------------------------------------------------------------------
# Context and sampler configuration


@dataclass
class ContextState:
    """Mutable, single-owner token context for one in-flight sequence."""

    token_ids: list[int] = field(default_factory=list)

    def append(self, token_id: int) -> None:
        self.token_ids.append(token_id)

    def copy(self) -> "ContextState":
        return ContextState(token_ids=list(self.token_ids))

    def __len__(self) -> int:
        return len(self.token_ids)


@dataclass(frozen=True)
class SamplerConfig:
    """Temperature, then top-k, then top-p filtering, then renormalize.

    temperature == 0 means greedy argmax with ties broken by lowest id.
    """

    temperature: float = 1.0
    top_k: int | None = None
    top_p: float | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise InvalidArgument("temperature must be >= 0")
        if self.top_k is not None and self.top_k < 1:
            raise InvalidArgument("top_k must be >= 1")
        if self.top_p is not None and not 0.0 < self.top_p <= 1.0:
            raise InvalidArgument("top_p must be in (0, 1]")


def sample(dist: TokenDistribution, sampler: SamplerConfig, rng: np.random.Generator) -> int:
    """Draw one token id; consumes exactly one uniform unless greedy.

    Truncated distributions are sampled over their listed tokens after
    renormalization (the unlisted tail cannot name a specific token).
    """
    lps = np.maximum(dist.log_probs, LOG_PROB_FLOOR)
    ids = dist.token_ids if dist.token_ids is not None else np.arange(dist.vocab_size)
    if sampler.temperature == 0.0:
        return int(ids[int(np.argmax(lps))])
    logits = lps / sampler.temperature
    # stable ordering: by descending logit, then ascending id
    order = np.lexsort((ids, -logits))
    logits = logits[order]
    ids = ids[order]
    if sampler.top_k is not None:
        logits = logits[: sampler.top_k]
        ids = ids[: sampler.top_k]
    probs = np.exp(logits - np.max(logits))
    probs /= probs.sum()
    if sampler.top_p is not None:
        cum = np.cumsum(probs)
        keep = (cum - probs) < sampler.top_p  # always keeps the head token
        probs = probs[keep]
        ids = ids[keep]
        probs /= probs.sum()
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    return int(ids[min(idx, len(ids) - 1)])


# ---------------------------------------------------------------------------
# Providers


class Provider(ABC):
    """A source of next-token distributions, immutable once built."""

    vocab_size: int
    eos_id: int | None = None
    tokenizer: CharTokenizer | WhitespaceTokenizer | None = None

    @abstractmethod
    def next_distribution(self, context_ids: Sequence[int]) -> TokenDistribution:
        """Distribution over the next token given the context so far."""


class TableProvider(Provider):
    """Deterministic rule table: the longest context-suffix rule wins, with a
    default distribution as fallback."""

    def __init__(
        self,
        vocab_size: int,
        default: TokenDistribution,
        rules: Sequence[tuple[Sequence[int], TokenDistribution]] = (),
        eos_id: int | None = None,
        tokenizer=None,
    ):
        self.vocab_size = vocab_size
        self.eos_id = eos_id
        self.tokenizer = tokenizer
        self._default = default
        self._rules = sorted(
            ((tuple(pat), dist) for pat, dist in rules),
            key=lambda r: len(r[0]),
            reverse=True,
        )

    def next_distribution(self, context_ids: Sequence[int]) -> TokenDistribution:
        ctx = tuple(context_ids)
        for pattern, dist in self._rules:
            if len(pattern) <= len(ctx) and ctx[len(ctx) - len(pattern):] == pattern:
                return dist
        return self._default


@dataclass(frozen=True)
class Candidate:
    """One weighted continuation a scripted provider can follow.

    ``locked`` marks positions where the script is near-deterministic (low
    noise); everything else gets the provider's open noise level.
    """

    token_ids: tuple[int, ...]
    weight: float
    locked: tuple[bool, ...]


def _locked_mask(text: str, lock_spans: Sequence[str], lock_open: str, lock_close: str) -> list[bool]:
    mask = [False] * len(text)
    start = 0
    while True:
        i = text.find(lock_open, start)
        if i < 0:
            break
        j = text.find(lock_close, i + len(lock_open))
        end = (j + len(lock_close)) if j >= 0 else len(text)
        for k in range(i, end):
            mask[k] = True
        start = end
    for span in lock_spans:
        pos = 0
        while True:
            i = text.find(span, pos)
            if i < 0:
                break
            for k in range(i, i + len(span)):
                mask[k] = True
            pos = i + len(span)
    return mask


class MixtureOfSequencesProvider(Provider):
    """Scripted language model: for each registered prompt, a weighted set of
    continuation candidates defines the process.

    At each step the candidates closest to the generated text (fewest
    positional mismatches) stay active; the next-token distribution mixes
    their next characters with a small uniform noise floor over non-EOS
    tokens.  Inside locked spans the noise floor drops so critical content
    (e.g. a boxed answer) stays near-deterministic.

    Zero-weight candidates are latent paths: the process never starts one on
    its own, and while following one it keeps ``latent_follow_open`` mass on
    the path (the rest pulls back to its own preferred continuation), so
    foreign-styled text stays improbable token by token.  Inside locked spans
    the follow mass rises to ``latent_follow_locked``: having been led there,
    the process completes critical content consistently with what precedes.
    Contexts that match no registered prompt fall back to an EOS-heavy
    distribution.
    """

    def __init__(
        self,
        tokenizer,
        prompt_candidates: dict[str, list[tuple[str, float]]],
        noise_open: float = 0.08,
        noise_locked: float = 0.002,
        lock_open: str = "\\boxed{",
        lock_close: str = "}",
        lock_spans: Sequence[str] = (),
        latent_follow_open: float = 0.25,
        latent_follow_locked: float = 0.97,
    ):
        if not 0.0 < noise_locked <= noise_open < 1.0:
            raise InvalidArgument("need 0 < noise_locked <= noise_open < 1")
        if not 0.0 < latent_follow_open <= latent_follow_locked <= 1.0:
            raise InvalidArgument("need 0 < latent_follow_open <= latent_follow_locked <= 1")
        self.tokenizer = tokenizer
        self.vocab_size = tokenizer.vocab_size
        self.eos_id = tokenizer.eos_id
        self._noise_open = noise_open
        self._noise_locked = noise_locked
        self._latent_open = latent_follow_open
        self._latent_locked = latent_follow_locked
        self._prompts: list[tuple[tuple[int, ...], list[Candidate]]] = []
        for prompt, cands in prompt_candidates.items():
            total = sum(w for _, w in cands)
            if total <= 0:
                raise InvalidArgument(f"prompt {prompt!r} has no positive-weight candidate")
            built = []
            for text, weight in cands:
                if weight < 0:
                    raise InvalidArgument("candidate weights must be >= 0")
                mask = _locked_mask(text, lock_spans, lock_open, lock_close)
                built.append(
                    Candidate(
                        token_ids=tuple(tokenizer.encode(text)),
                        weight=weight / total,
                        locked=tuple(mask),
                    )
                )
            self._prompts.append((tuple(tokenizer.encode(prompt)), built))
        self._prompts.sort(key=lambda x: len(x[0]), reverse=True)

    def _match_prompt(self, ctx: tuple[int, ...]):
        for prompt_ids, cands in self._prompts:
            if ctx[: len(prompt_ids)] == prompt_ids:
                return prompt_ids, cands
        return None, None

    def next_distribution(self, context_ids: Sequence[int]) -> TokenDistribution:
        ctx = tuple(context_ids)
        prompt_ids, cands = self._match_prompt(ctx)
        v = self.vocab_size
        if cands is None:
            probs = np.full(v, 0.05 / (v - 1))
            probs[self.eos_id] = 0.95
            return TokenDistribution.from_probs(probs)
        generated = ctx[len(prompt_ids):]
        n = len(generated)
        mismatches = []
        for cand in cands:
            m = 0
            for j, tok in enumerate(generated):
                want = cand.token_ids[j] if j < len(cand.token_ids) else self.eos_id
                if tok != want:
                    m += 1
            mismatches.append(m)
        best = min(mismatches)
        active = [c for c, m in zip(cands, mismatches) if m == best]
        base = np.zeros(v)
        locked = True
        for cand in active:
            if n < len(cand.token_ids):
                base[cand.token_ids[n]] += cand.weight
                locked = locked and cand.locked[n]
            else:
                base[self.eos_id] += cand.weight
        if base.sum() == 0.0:
            # only latent candidates remain active: keep partial mass on the
            # path, pulling back toward the best own (positive-weight)
            # candidate's continuation at this position.
            mu = self._latent_locked if locked else self._latent_open
            share = mu / len(active)
            for cand in active:
                next_id = cand.token_ids[n] if n < len(cand.token_ids) else self.eos_id
                base[next_id] += share
            ranked = sorted(
                ((m, -c.weight, i) for i, (c, m) in enumerate(zip(cands, mismatches)) if c.weight > 0)
            )
            if ranked:
                own = cands[ranked[0][2]]
                if n < len(own.token_ids):
                    base[own.token_ids[n]] += 1.0 - mu
        base /= base.sum()
        eta = self._noise_locked if locked else self._noise_open
        probs = (1.0 - eta) * base
        noise = eta / (v - 1)
        probs += noise
        probs[self.eos_id] -= noise  # noise floor never names EOS
        return TokenDistribution.from_probs(probs / probs.sum())


class NgramProvider(Provider):
    """Add-lambda smoothed n-gram model over token ids.

    Contexts are the last ``order`` tokens, left-padded with a sentinel at
    sequence starts; unseen contexts therefore yield the uniform
    distribution.  Per-context distributions are cached after first use.
    """

    def __init__(
        self,
        order: int,
        smoothing_lambda: float,
        vocab_size: int,
        counts: dict[tuple[int, ...], np.ndarray],
        eos_id: int | None = None,
        tokenizer=None,
    ):
        if order < 1:
            raise InvalidArgument("order must be >= 1")
        if smoothing_lambda <= 0:
            raise InvalidArgument("smoothing_lambda must be > 0")
        self.order = order
        self.smoothing_lambda = smoothing_lambda
        self.vocab_size = vocab_size
        self.eos_id = eos_id
        self.tokenizer = tokenizer
        self._counts = counts
        self._cache: dict[tuple[int, ...], TokenDistribution] = {}

    def _context_key(self, context_ids: Sequence[int]) -> tuple[int, ...]:
        tail = tuple(context_ids[-self.order:])
        if len(tail) < self.order:
            tail = (PAD_SENTINEL,) * (self.order - len(tail)) + tail
        return tail

    def next_distribution(self, context_ids: Sequence[int]) -> TokenDistribution:
        key = self._context_key(context_ids)
        # concurrent cache fills race benignly: both writers store equal values
        dist = self._cache.get(key)
        if dist is None:
            counts = self._counts.get(key)
            lam = self.smoothing_lambda
            if counts is None:
                probs = np.full(self.vocab_size, 1.0 / self.vocab_size)
            else:
                probs = (counts + lam) / (counts.sum() + lam * self.vocab_size)
            dist = TokenDistribution.from_probs(probs)
            self._cache[key] = dist
        return dist


def ngram_train(
    sequences: Iterable[Sequence[int]],
    order: int,
    smoothing_lambda: float,
    vocab_size: int,
    eos_id: int | None = None,
    tokenizer=None,
) -> NgramProvider:
    """Count transitions in the given token sequences and build the model.

    Only transitions present in the streams are counted; no implicit EOS is
    appended.  Retraining on identical input yields identical distributions.
    """
    counts: dict[tuple[int, ...], np.ndarray] = {}
    saw_any = False
    for seq in sequences:
        for t, token in enumerate(seq):
            saw_any = True
            if not 0 <= token < vocab_size:
                raise InvalidArgument(f"token {token} outside vocab of {vocab_size}")
            tail = tuple(seq[max(0, t - order):t])
            if len(tail) < order:
                tail = (PAD_SENTINEL,) * (order - len(tail)) + tail
            row = counts.get(tail)
            if row is None:
                row = np.zeros(vocab_size)
                counts[tail] = row
            row[token] += 1.0
    if not saw_any:
        raise InvalidArgument("corpus is empty")
    return NgramProvider(
        order=order,
        smoothing_lambda=smoothing_lambda,
        vocab_size=vocab_size,
        counts=counts,
        eos_id=eos_id,
        tokenizer=tokenizer,
    )


def ngram_train_text(
    texts: Sequence[str],
    order: int,
    smoothing_lambda: float,
    tokenizer=None,
    mode: str = "char",
) -> NgramProvider:
    """Train from raw text, one sequence per entry, inferring the tokenizer
    from the corpus when none is given (mode: char | whitespace)."""
    if tokenizer is None:
        if mode == "char":
            tokenizer = CharTokenizer.from_corpus(texts)
        elif mode == "whitespace":
            tokenizer = WhitespaceTokenizer.from_corpus(texts)
        else:
            raise InvalidArgument(f"unknown tokenizer mode {mode!r}")
    return ngram_train(
        [tokenizer.encode(t) for t in texts],
        order=order,
        smoothing_lambda=smoothing_lambda,
        vocab_size=tokenizer.vocab_size,
        eos_id=tokenizer.eos_id,
        tokenizer=tokenizer,
    )


# ---------------------------------------------------------------------------
# Remote provider


class RemoteProvider(Provider):
    """Client for a completion-style endpoint with per-position logprobs.

    Requests carry {model, prompt, max_tokens, temperature, logprobs, echo};
    responses list, per position, the top-N token ids with log probabilities
    plus the vocabulary size, from which a truncated distribution (top-N +
    aggregated tail) is rebuilt.  Scoring existing text uses echo mode in a
    single request; generation interleaves single-token requests.
    """

    def __init__(
        self,
        endpoint_url: str,
        model_name: str,
        top_logprob_count: int,
        tokenizer,
        timeout_ms: int = 10_000,
        api_key_env_var: str | None = None,
        max_retries: int = 2,
        client: httpx.Client | None = None,
    ):
        if top_logprob_count < 1:
            raise InvalidArgument("top_logprob_count must be >= 1")
        self.endpoint_url = endpoint_url
        self.model_name = model_name
        self.top_logprob_count = top_logprob_count
        self.tokenizer = tokenizer
        self.vocab_size = tokenizer.vocab_size
        self.eos_id = tokenizer.eos_id
        self.max_retries = max_retries
        headers = {}
        if api_key_env_var:
            key = os.environ.get(api_key_env_var, "")
            if key:
                headers["Authorization"] = f"Bearer {key}"
        self._client = client or httpx.Client(timeout=timeout_ms / 1000.0, headers=headers)
        self._headers = headers

    def _post(self, payload: dict) -> dict:
        last_exc: Exception | None = None
        for _ in range(self.max_retries + 1):
            try:
                resp = self._client.post(self.endpoint_url, json=payload, headers=self._headers)
            except httpx.HTTPError as exc:
                last_exc = exc
                continue
            if resp.status_code >= 500:
                last_exc = ProviderUnavailable(f"server returned {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise ProtocolError(f"unexpected status {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()
            except ValueError as exc:
                raise ProtocolError("response is not valid JSON") from exc
        raise ProviderUnavailable(f"request failed after retries: {last_exc}")

    def _parse_position(self, payload: dict, position: dict) -> TokenDistribution:
        try:
            vocab_size = int(payload["vocab_size"])
            ids = [int(i) for i in position["top_token_ids"]]
            lps = [float(x) for x in position["top_logprobs"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed logprob payload: {exc}") from exc
        if len(ids) != len(lps) or not ids:
            raise ProtocolError("top_token_ids and top_logprobs must align and be nonempty")
        if len(ids) >= vocab_size:
            lp = np.full(vocab_size, -math.inf)
            lp[ids] = lps
            return TokenDistribution(log_probs=lp, vocab_size=vocab_size)
        return TokenDistribution.truncated(ids, lps, vocab_size=vocab_size)

    def _completion_payload(self, prompt: str, max_tokens: int, echo: bool) -> dict:
        return {
            "model": self.model_name,
            "prompt": prompt,
            "max_tokens": max_tokens,
            "temperature": 1.0,
            "logprobs": self.top_logprob_count,
            "echo": echo,
        }

    def next_distribution(self, context_ids: Sequence[int]) -> TokenDistribution:
        prompt = self.tokenizer.decode(context_ids)
        data = self._post(self._completion_payload(prompt, max_tokens=1, echo=False))
        try:
            positions = data["choices"][0]["positions"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProtocolError("missing choices[0].positions") from exc
        if not positions:
            raise ProtocolError("no positions returned for generation request")
        return self._parse_position(data, positions[0])

    def echo_distributions(self, text: str) -> list[TokenDistribution]:
        """Per-position distributions over the echoed prompt: entry t is the
        distribution before the t-th prompt token was consumed."""
        data = self._post(self._completion_payload(text, max_tokens=0, echo=True))
        try:
            positions = data["choices"][0]["positions"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProtocolError("missing choices[0].positions") from exc
        return [self._parse_position(data, pos) for pos in positions]
