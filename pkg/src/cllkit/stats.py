"""Core statistics for token-level distribution testing.

The central quantity is the centered log-likelihood of an observed token,

    phi = log p(x) + H[p],

which has exact zero conditional mean when x is drawn from p itself, so the
running sum S_k = sum(phi_t) is a martingale under the in-distribution
hypothesis and drifts linearly downward under a shifted source.  Everything
here is a pure function over immutable values; all logarithms are natural
(nats).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ApproximateVariance,
    DegenerateVariance,
    DivergentDrift,
    EmptySequence,
    InvalidArgument,
    InvalidDistribution,
    SupportMismatch,
    UnsupportedToken,
)

DEFAULT_CLIP_BOUND = 10.0
LOG_PROB_FLOOR = -50.0
_NORM_TOL = 1e-6
_LOG_PROB_SLACK = 1e-9

IN_DISTRIBUTION = "in_distribution"
OUT_OF_DISTRIBUTION = "out_of_distribution"


def _floor_log_probs(log_probs: np.ndarray) -> np.ndarray:
    """Clamp log probabilities below exp(LOG_PROB_FLOOR) up to the floor.

    Exact zeros (-inf) are floored too; callers that must distinguish true
    zeros test the raw array instead.
    """
    return np.maximum(log_probs, LOG_PROB_FLOOR)


@dataclass(frozen=True)
class TokenDistribution:
    """A next-token log-probability distribution, full or truncated.

    Full support: ``log_probs[i]`` is the log probability of token id ``i``
    and ``token_ids`` is None.  Truncated support: ``log_probs`` aligns with
    ``token_ids`` (the listed tokens), and the remaining ``tail_token_count``
    tokens jointly hold ``tail_log_mass`` of log probability.
    """

    log_probs: np.ndarray
    vocab_size: int
    token_ids: np.ndarray | None = None
    tail_token_count: int = 0
    tail_log_mass: float = -math.inf

    def __post_init__(self) -> None:
        lp = np.asarray(self.log_probs, dtype=np.float64)
        lp.flags.writeable = False
        object.__setattr__(self, "log_probs", lp)
        if self.token_ids is not None:
            ids = np.asarray(self.token_ids, dtype=np.int64)
            ids.flags.writeable = False
            object.__setattr__(self, "token_ids", ids)
        self._validate()

    def _validate(self) -> None:
        if self.vocab_size < 2:
            raise InvalidDistribution(f"vocab_size must be >= 2, got {self.vocab_size}")
        if np.any(self.log_probs > _LOG_PROB_SLACK):
            raise InvalidDistribution("log probabilities must be <= 0")
        if self.token_ids is None:
            if len(self.log_probs) != self.vocab_size:
                raise InvalidDistribution(
                    f"full support needs {self.vocab_size} entries, got {len(self.log_probs)}"
                )
            total = _logsumexp(self.log_probs)
        else:
            if len(self.token_ids) != len(self.log_probs):
                raise InvalidDistribution("token_ids and log_probs lengths differ")
            if len(np.unique(self.token_ids)) != len(self.token_ids):
                raise InvalidDistribution("token_ids must be unique")
            if np.any(self.token_ids < 0) or np.any(self.token_ids >= self.vocab_size):
                raise InvalidDistribution("token id outside vocabulary")
            if self.tail_token_count < 0:
                raise InvalidDistribution("tail_token_count must be >= 0")
            if self.tail_token_count == 0 and self.tail_log_mass > LOG_PROB_FLOOR:
                raise InvalidDistribution("positive tail mass with no tail tokens")
            total = _logsumexp(np.append(self.log_probs, self.tail_log_mass))
        if abs(total) > _NORM_TOL:
            raise InvalidDistribution(f"distribution not normalized: logsumexp={total:.3e}")

    @property
    def is_full(self) -> bool:
        return self.token_ids is None

    @classmethod
    def from_probs(cls, probs) -> "TokenDistribution":
        p = np.asarray(probs, dtype=np.float64)
        if np.any(p < 0):
            raise InvalidDistribution("probabilities must be non-negative")
        with np.errstate(divide="ignore"):
            lp = np.log(p)
        return cls(log_probs=lp, vocab_size=len(p))

    @classmethod
    def from_log_probs(cls, log_probs) -> "TokenDistribution":
        lp = np.asarray(log_probs, dtype=np.float64)
        return cls(log_probs=lp, vocab_size=len(lp))

    @classmethod
    def uniform(cls, vocab_size: int) -> "TokenDistribution":
        lp = np.full(vocab_size, -math.log(vocab_size))
        return cls(log_probs=lp, vocab_size=vocab_size)

    @classmethod
    def one_hot(cls, vocab_size: int, token_id: int) -> "TokenDistribution":
        lp = np.full(vocab_size, -math.inf)
        lp[token_id] = 0.0
        return cls(log_probs=lp, vocab_size=vocab_size)

    @classmethod
    def truncated(
        cls,
        token_ids,
        log_probs,
        vocab_size: int,
        tail_log_mass: float | None = None,
    ) -> "TokenDistribution":
        """Build a truncated distribution; tail mass defaults to 1 - sum(top)."""
        lp = np.asarray(log_probs, dtype=np.float64)
        ids = np.asarray(token_ids, dtype=np.int64)
        if tail_log_mass is None:
            top_mass = float(np.sum(np.exp(lp)))
            rem = 1.0 - top_mass
            tail_log_mass = math.log(rem) if rem > 0.0 else -math.inf
        return cls(
            log_probs=lp,
            vocab_size=vocab_size,
            token_ids=ids,
            tail_token_count=vocab_size - len(ids),
            tail_log_mass=tail_log_mass,
        )

    def log_prob_of(self, token_id: int) -> float:
        """Raw log probability of a token inside the reported support."""
        if not 0 <= token_id < self.vocab_size:
            raise InvalidArgument(f"token id {token_id} outside vocab of {self.vocab_size}")
        if self.is_full:
            return float(self.log_probs[token_id])
        pos = np.nonzero(self.token_ids == token_id)[0]
        if len(pos) == 0:
            raise UnsupportedToken(token_id)
        return float(self.log_probs[pos[0]])

    def probs(self) -> np.ndarray:
        """Probabilities over the listed support (full vocab when full)."""
        return np.exp(self.log_probs)


@dataclass(frozen=True)
class PhiRecord:
    """Per-token centered log-likelihood statistics.

    ``step_variance`` is the conditional variance of phi at this step,
    sum(p * phi^2) over the step's distribution; it accumulates into the
    V_L term of the concentration bound.  ``approximate`` marks values
    estimated from a truncated support.
    """

    token_id: int
    log_prob: float
    entropy: float
    phi: float
    phi_clipped: float
    step_variance: float
    approximate: bool = False


def _logsumexp(log_values: np.ndarray) -> float:
    finite = log_values[np.isfinite(log_values)]
    if len(finite) == 0:
        return -math.inf
    m = float(np.max(finite))
    return m + math.log(float(np.sum(np.exp(finite - m))))


def entropy(dist: TokenDistribution) -> float:
    """Shannon entropy in nats, with 0*log(0) taken as 0.

    For a truncated support the tail mass r is treated as spread uniformly
    over the tail tokens, giving the estimate
    -sum(p_top * log p_top) - r * log(r / tail_count); this slightly
    overestimates the true entropy, so downstream verdicts lean
    in-distribution.
    """
    lp = dist.log_probs
    p = np.exp(lp)
    mask = p > 0.0
    head = -float(np.sum(p[mask] * _floor_log_probs(lp[mask])))
    if dist.is_full:
        return head
    r = math.exp(dist.tail_log_mass)
    if r <= 0.0 or dist.tail_token_count == 0:
        return head
    per_token_log = max(dist.tail_log_mass - math.log(dist.tail_token_count), LOG_PROB_FLOOR)
    return head - r * per_token_log


def clip_phi(value: float, clip_bound: float = DEFAULT_CLIP_BOUND) -> float:
    return min(max(value, -clip_bound), clip_bound)


def phi(
    dist: TokenDistribution,
    token_id: int,
    clip_bound: float = DEFAULT_CLIP_BOUND,
) -> PhiRecord:
    """Score one observed token: phi = log p(token) + H[p].

    Raises UnsupportedToken when the token lies outside a truncated support.
    """
    if clip_bound <= 0:
        raise InvalidArgument("clip_bound must be > 0")
    raw_lp = dist.log_prob_of(token_id)
    lp = max(raw_lp, LOG_PROB_FLOOR)
    h = entropy(dist)
    value = lp + h
    return PhiRecord(
        token_id=token_id,
        log_prob=lp,
        entropy=h,
        phi=value,
        phi_clipped=clip_phi(value, clip_bound),
        step_variance=phi_variance(dist, _warn=False),
        approximate=not dist.is_full,
    )


def phi_variance(dist: TokenDistribution, _warn: bool = True) -> float:
    """Conditional variance of phi at one step: sum(p * phi^2).

    The conditional mean of phi is zero under sampling from the step's own
    distribution, so the raw second moment is the variance.  Truncated
    supports use the tail-uniform estimate and emit ApproximateVariance.
    """
    lp = dist.log_probs
    p = np.exp(lp)
    mask = p > 0.0
    h = entropy(dist)
    phis = _floor_log_probs(lp[mask]) + h
    head = float(np.sum(p[mask] * phis * phis))
    if dist.is_full:
        return head
    if _warn:
        warnings.warn(
            "variance estimated from truncated support", ApproximateVariance, stacklevel=2
        )
    r = math.exp(dist.tail_log_mass)
    if r <= 0.0 or dist.tail_token_count == 0:
        return head
    tail_phi = max(dist.tail_log_mass - math.log(dist.tail_token_count), LOG_PROB_FLOOR) + h
    return head + r * tail_phi * tail_phi


def cumulative_score(records: list[PhiRecord], use_clipped: bool = False) -> np.ndarray:
    """Running prefix sums S_1..S_L of phi (or clipped phi)."""
    if not records:
        raise EmptySequence("no records to accumulate")
    values = [r.phi_clipped if use_clipped else r.phi for r in records]
    return np.cumsum(np.asarray(values, dtype=np.float64))


def expected_phi_under(q: TokenDistribution, p: TokenDistribution) -> float:
    """Expected phi of p-scored tokens when tokens are drawn from q.

    Equals sum(q(x) * (log p(x) + H(p))), which satisfies the exact identity

        E_q[phi_p] = -KL(q || p) + H(p) - H(q),

    and can therefore be positive when q is much lower-entropy than p.
    Raises DivergentDrift when q places mass on a token with exact zero
    probability under p.
    """
    if not (q.is_full and p.is_full):
        raise InvalidArgument("expected_phi_under needs full supports")
    if q.vocab_size != p.vocab_size:
        raise SupportMismatch("q and p must share a vocabulary")
    qp = q.probs()
    mask = qp > 0.0
    if np.any(np.isneginf(p.log_probs[mask])):
        raise DivergentDrift("q has mass where p has exact zero probability")
    return float(np.sum(qp[mask] * (_floor_log_probs(p.log_probs[mask]) + entropy(p))))


def kl_divergence(q: TokenDistribution, p: TokenDistribution) -> float:
    """KL(q || p) over full supports, with the same zero handling as above."""
    if not (q.is_full and p.is_full):
        raise InvalidArgument("kl_divergence needs full supports")
    if q.vocab_size != p.vocab_size:
        raise SupportMismatch("q and p must share a vocabulary")
    qp = q.probs()
    mask = qp > 0.0
    if np.any(np.isneginf(p.log_probs[mask])):
        raise DivergentDrift("q has mass where p has exact zero probability")
    ql = _floor_log_probs(q.log_probs[mask])
    pl = _floor_log_probs(p.log_probs[mask])
    return float(np.sum(qp[mask] * (ql - pl)))


def freedman_bound(gamma: float, v_cumulative: float, clip_bound: float) -> float:
    """Upper bound on P(clipped score sum <= -gamma) for an in-distribution
    sequence: exp(-gamma^2 / (2 * (V_L + B * gamma / 3))).

    This is the martingale Bernstein (Freedman) tail with increments bounded
    by B and cumulative conditional variance V_L.  gamma = 0 returns 1.
    """
    if gamma < 0 or v_cumulative < 0:
        raise InvalidArgument("gamma and v_cumulative must be >= 0")
    if clip_bound <= 0:
        raise InvalidArgument("clip_bound must be > 0")
    if gamma == 0.0:
        return 1.0
    return math.exp(-(gamma * gamma) / (2.0 * (v_cumulative + clip_bound * gamma / 3.0)))


def threshold_for_alpha(alpha: float, v_cumulative: float, clip_bound: float) -> float:
    """Smallest gamma whose Freedman bound equals alpha.

    Solves gamma^2 - (2B ln(1/alpha)/3) gamma - 2 V_L ln(1/alpha) = 0 for the
    positive root, so freedman_bound(result, V_L, B) == alpha.
    """
    if not 0.0 < alpha <= 1.0:
        raise InvalidArgument(f"alpha must be in (0, 1], got {alpha}")
    if v_cumulative < 0:
        raise InvalidArgument("v_cumulative must be >= 0")
    if clip_bound <= 0:
        raise InvalidArgument("clip_bound must be > 0")
    log_term = math.log(1.0 / alpha)
    if log_term == 0.0:
        return 0.0
    b = 2.0 * clip_bound * log_term / 3.0
    return (b + math.sqrt(b * b + 8.0 * v_cumulative * log_term)) / 2.0


@dataclass(frozen=True)
class DiscriminantConfig:
    """Classification settings: clip bound, threshold rule, report grid.

    Exactly one of ``fixed_gamma`` (use gamma directly) or ``alpha`` (derive
    gamma by inverting the tail bound at the sequence's own V_L) must be set.
    """

    clip_bound: float = DEFAULT_CLIP_BOUND
    fixed_gamma: float | None = None
    alpha: float | None = None
    report_thresholds: tuple[float, ...] = (-1.0, -3.0, -5.0)

    def __post_init__(self) -> None:
        if self.clip_bound <= 0:
            raise InvalidArgument("clip_bound must be > 0")
        if (self.fixed_gamma is None) == (self.alpha is None):
            raise InvalidArgument("set exactly one of fixed_gamma or alpha")
        if self.alpha is not None and not 0.0 < self.alpha < 1.0:
            raise InvalidArgument("alpha must be in (0, 1)")


@dataclass(frozen=True)
class SequenceScore:
    records: tuple[PhiRecord, ...]
    trajectory: np.ndarray
    s_final: float
    s_clipped_final: float
    v_cumulative: float
    threshold: float
    verdict: str

    def __post_init__(self) -> None:
        t = np.asarray(self.trajectory, dtype=np.float64)
        t.flags.writeable = False
        object.__setattr__(self, "trajectory", t)


def classify_sequence(records: list[PhiRecord], config: DiscriminantConfig) -> SequenceScore:
    """Score a whole sequence and decide in- vs out-of-distribution.

    The verdict is out_of_distribution iff the clipped final score is at or
    below -threshold, with threshold either fixed or derived from alpha via
    the inverted tail bound at the sequence's accumulated variance.
    """
    if not records:
        raise EmptySequence("cannot classify an empty sequence")
    trajectory = cumulative_score(records, use_clipped=False)
    s_final = float(trajectory[-1])
    s_clipped_final = float(sum(r.phi_clipped for r in records))
    v_cumulative = float(sum(r.step_variance for r in records))
    if config.fixed_gamma is not None:
        threshold = config.fixed_gamma
    else:
        threshold = threshold_for_alpha(config.alpha, v_cumulative, config.clip_bound)
    verdict = OUT_OF_DISTRIBUTION if s_clipped_final <= -threshold else IN_DISTRIBUTION
    return SequenceScore(
        records=tuple(records),
        trajectory=trajectory,
        s_final=s_final,
        s_clipped_final=s_clipped_final,
        v_cumulative=v_cumulative,
        threshold=threshold,
        verdict=verdict,
    )


def empirical_snr(scores_h0, scores_h1) -> float:
    """Squared mean separation over the null variance (1/(n-1) normalized)."""
    h0 = np.asarray(scores_h0, dtype=np.float64)
    h1 = np.asarray(scores_h1, dtype=np.float64)
    if len(h0) < 2:
        raise DegenerateVariance("need >= 2 null samples")
    var0 = float(np.var(h0, ddof=1))
    if var0 == 0.0:
        raise DegenerateVariance("null samples have zero variance")
    diff = float(np.mean(h1) - np.mean(h0))
    return diff * diff / var0


@dataclass(frozen=True)
class ContextEnsemble:
    """A finite mixture of contexts, each with a reference distribution p and
    a shifted source q, weighted by context probability."""

    entries: tuple[tuple[TokenDistribution, TokenDistribution, float], ...]

    def __post_init__(self) -> None:
        if not self.entries:
            raise InvalidArgument("ensemble needs at least one context")
        total = sum(w for _, _, w in self.entries)
        if abs(total - 1.0) > 1e-9:
            raise InvalidArgument(f"context weights must sum to 1, got {total}")
        for p, q, w in self.entries:
            if w < 0:
                raise InvalidArgument("context weights must be >= 0")
            if p.vocab_size != q.vocab_size:
                raise SupportMismatch("p and q must share vocab_size per context")


@dataclass(frozen=True)
class SnrDecomposition:
    """Exact mixture moments for the raw log-likelihood statistic and the
    centered one, via the law of total variance.

    delta is the signed per-step drift E[S | shifted] - E[S | null]; it is
    identical for both statistics because the centering term cancels in the
    difference.  The null variance splits into sigma_h_sq (variance of the
    per-context entropy, removed by centering) plus sigma_eps_sq_mean (mean
    within-context variance, common to both).
    """

    snr_ll: float
    snr_cll: float
    sigma_h_sq: float
    sigma_eps_sq_mean: float
    delta: float


def analytic_snr_decomposition(ensemble: ContextEnsemble) -> SnrDecomposition:
    weights = np.array([w for _, _, w in ensemble.entries])
    entropies = np.array([entropy(p) for p, _, _ in ensemble.entries])
    within_vars = []
    drifts = []
    for p, q, _ in ensemble.entries:
        lp = _floor_log_probs(p.log_probs)
        pp = p.probs()
        h = entropy(p)
        within_vars.append(float(np.sum(pp * lp * lp)) - h * h)
        drifts.append(expected_phi_under(q, p))
    sigma_h_sq = float(np.sum(weights * entropies * entropies) - np.sum(weights * entropies) ** 2)
    sigma_h_sq = max(sigma_h_sq, 0.0)
    sigma_eps_sq_mean = float(np.sum(weights * np.asarray(within_vars)))
    delta = float(np.sum(weights * np.asarray(drifts)))
    if sigma_eps_sq_mean <= 0.0:
        raise DegenerateVariance("within-context variance is zero")
    signal = delta * delta
    return SnrDecomposition(
        snr_ll=signal / (sigma_h_sq + sigma_eps_sq_mean),
        snr_cll=signal / sigma_eps_sq_mean,
        sigma_h_sq=sigma_h_sq,
        sigma_eps_sq_mean=sigma_eps_sq_mean,
        delta=delta,
    )


def overlap_from_snr(snr: float) -> float:
    """Overlap area of two equal-variance normals separated per the given SNR:
    2 * Phi(-sqrt(snr / 2))."""
    if snr < 0:
        raise InvalidArgument("snr must be >= 0")
    return 1.0 - math.erf(math.sqrt(snr) / 2.0)


@dataclass(frozen=True)
class ExtremeTokenReport:
    avg_phi: float
    fractions: dict[float, float] = field(default_factory=dict)


def extreme_token_report(
    records: list[PhiRecord],
    thresholds: tuple[float, ...] = (-1.0, -3.0, -5.0),
) -> ExtremeTokenReport:
    """Mean phi plus, for each threshold tau, the fraction of tokens with
    phi >= tau.  Fractions are weakly increasing as tau decreases."""
    if not records:
        raise EmptySequence("no records to report on")
    phis = np.asarray([r.phi for r in records])
    fractions = {float(t): float(np.mean(phis >= t)) for t in thresholds}
    return ExtremeTokenReport(avg_phi=float(np.mean(phis)), fractions=fractions)
