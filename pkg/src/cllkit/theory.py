"""Self-contained property suite: checks the statistical identities and
concentration behavior on toy providers, with no network access.

Each check returns a CheckResult; run_all collects them into a report dict
suitable for JSON emission.  Monte-Carlo tolerances follow a 4-sigma rule on
the estimator's standard error, so raising the trial count tightens them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .providers import NgramProvider, Provider, derive_rng, ngram_train_text
from .stats import (
    ContextEnsemble,
    LOG_PROB_FLOOR,
    TokenDistribution,
    analytic_snr_decomposition,
    entropy,
    expected_phi_under,
    freedman_bound,
    kl_divergence,
    overlap_from_snr,
)
from .worlds import build_stylized_corpora


@dataclass
class CheckResult:
    name: str
    passed: bool
    details: dict = field(default_factory=dict)


def _random_distribution(rng: np.random.Generator, vocab_size: int) -> TokenDistribution:
    alpha = rng.uniform(0.2, 3.0)
    return TokenDistribution.from_probs(rng.dirichlet(np.full(vocab_size, alpha)))


def check_martingale_zero_mean(trials: int, seed: int) -> CheckResult:
    """sum(p * phi) == 0 for random full-support distributions."""
    rng = derive_rng(seed, "zero-mean")
    worst = 0.0
    for _ in range(trials):
        v = int(rng.integers(2, 65))
        dist = _random_distribution(rng, v)
        lp = np.maximum(dist.log_probs, LOG_PROB_FLOOR)
        mean = float(np.sum(dist.probs() * (lp + entropy(dist))))
        worst = max(worst, abs(mean))
    return CheckResult("martingale_zero_mean", worst < 1e-10, {"worst_abs_mean": worst})


def check_drift_identity(trials: int, seed: int) -> CheckResult:
    """E_q[phi_p] == -KL(q||p) + H(p) - H(q) for random pairs."""
    rng = derive_rng(seed, "drift")
    worst = 0.0
    for _ in range(trials):
        v = int(rng.integers(2, 65))
        p = _random_distribution(rng, v)
        q = _random_distribution(rng, v)
        lhs = expected_phi_under(q, p)
        rhs = -kl_divergence(q, p) + entropy(p) - entropy(q)
        worst = max(worst, abs(lhs - rhs))
    return CheckResult("drift_identity", worst < 1e-10, {"worst_abs_gap": worst})


def random_ensemble(rng: np.random.Generator, equal_entropy: bool = False) -> ContextEnsemble:
    """A context mixture with nonzero drift; equal_entropy builds contexts as
    permutations of one distribution so the entropy variance vanishes."""
    while True:
        v = int(rng.integers(3, 12))
        n = int(rng.integers(2, 6))
        weights = rng.dirichlet(np.ones(n))
        entries = []
        if equal_entropy:
            base = rng.dirichlet(np.full(v, rng.uniform(0.3, 2.0)))
            for _ in range(n):
                p = TokenDistribution.from_probs(rng.permutation(base))
                q = _random_distribution(rng, v)
                entries.append((p, q, 0.0))
        else:
            for _ in range(n):
                entries.append((_random_distribution(rng, v), _random_distribution(rng, v), 0.0))
        entries = [(p, q, float(w)) for (p, q, _), w in zip(entries, weights)]
        ens = ContextEnsemble(entries=tuple(entries))
        decomp = analytic_snr_decomposition(ens)
        if abs(decomp.delta) < 1e-6:
            continue
        if not equal_entropy and decomp.sigma_h_sq < 1e-8:
            continue
        return ens


def brute_force_snr(ensemble: ContextEnsemble) -> tuple[float, float]:
    """Direct joint-moment enumeration of SNR for the raw and centered
    statistics; the independent route the decomposition must match."""
    values_ll, values_cll, w0, w1 = [], [], [], []
    for p, q, w in ensemble.entries:
        h = entropy(p)
        lp = np.maximum(p.log_probs, LOG_PROB_FLOOR)
        for x in range(p.vocab_size):
            values_ll.append(lp[x])
            values_cll.append(lp[x] + h)
            w0.append(w * float(p.probs()[x]))
            w1.append(w * float(q.probs()[x]))
    ll = np.asarray(values_ll)
    cll = np.asarray(values_cll)
    w0 = np.asarray(w0)
    w1 = np.asarray(w1)

    def snr(values: np.ndarray) -> float:
        e0 = float(np.sum(w0 * values))
        e1 = float(np.sum(w1 * values))
        var0 = float(np.sum(w0 * values * values)) - e0 * e0
        return (e1 - e0) ** 2 / var0

    return snr(ll), snr(cll)


def check_snr_dominance(trials: int, seed: int) -> CheckResult:
    """Centered statistic dominates: snr_cll > snr_ll whenever entropies vary
    across contexts; equal when they do not; both match brute force."""
    rng = derive_rng(seed, "snr")
    worst_gap = math.inf
    worst_match = 0.0
    worst_equal = 0.0
    for i in range(trials):
        ens = random_ensemble(rng)
        decomp = analytic_snr_decomposition(ens)
        bf_ll, bf_cll = brute_force_snr(ens)
        worst_match = max(worst_match, abs(decomp.snr_ll - bf_ll), abs(decomp.snr_cll - bf_cll))
        worst_gap = min(worst_gap, decomp.snr_cll - decomp.snr_ll)
        if i % 10 == 0:
            ens_eq = random_ensemble(rng, equal_entropy=True)
            d_eq = analytic_snr_decomposition(ens_eq)
            worst_equal = max(worst_equal, abs(d_eq.snr_cll - d_eq.snr_ll))
    passed = worst_gap > 0 and worst_match < 1e-9 and worst_equal < 1e-9
    return CheckResult(
        "snr_dominance",
        passed,
        {
            "min_dominance_gap": worst_gap,
            "worst_brute_force_gap": worst_match,
            "worst_equal_entropy_gap": worst_equal,
        },
    )


def check_overlap_formula() -> CheckResult:
    """Spot values and monotone range of the normal-overlap map."""
    at_zero = overlap_from_snr(0.0)
    at_two = overlap_from_snr(2.0)
    expected_two = 1.0 - math.erf(1.0 / math.sqrt(2.0))  # 2 * Phi(-1)
    grid = [overlap_from_snr(s) for s in np.linspace(0.0, 50.0, 200)]
    monotone = all(a >= b for a, b in zip(grid, grid[1:]))
    in_range = all(0.0 < g <= 1.0 for g in grid)
    passed = (
        abs(at_zero - 1.0) < 1e-12
        and abs(at_two - expected_two) < 1e-12
        and monotone
        and in_range
        and overlap_from_snr(1e9) < 1e-12
    )
    return CheckResult(
        "overlap_formula", passed, {"at_zero": at_zero, "at_two": at_two}
    )


# ---------------------------------------------------------------------------
# Provider-based Monte-Carlo checks


class _ContextStatsCache:
    """Per-context sampling tables (cumulative probs, phi, variance); keyed by
    the n-gram context window when available, full context otherwise."""

    def __init__(self, provider: Provider):
        self._provider = provider
        self._cache: dict = {}
        self._order = provider.order if isinstance(provider, NgramProvider) else None

    def _key(self, ctx: list[int]):
        if self._order is None:
            return tuple(ctx)
        return tuple(ctx[-self._order:])

    def stats(self, ctx: list[int]):
        key = self._key(ctx)
        entry = self._cache.get(key)
        if entry is None:
            dist = self._provider.next_distribution(ctx)
            probs = dist.probs()
            h = entropy(dist)
            phis = np.maximum(dist.log_probs, LOG_PROB_FLOOR) + h
            var = float(np.sum(probs * phis * phis))
            entry = (np.cumsum(probs), phis, var)
            self._cache[key] = entry
        return entry


def sample_phi_sequences(
    provider: Provider,
    n_sequences: int,
    seq_len: int,
    seed: int,
    clip_bound: float = 10.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Self-sample sequences and return per-sequence arrays of clipped score
    sums, cumulative variances, and the flat per-token phi values."""
    cache = _ContextStatsCache(provider)
    s_clipped = np.empty(n_sequences)
    v_cum = np.empty(n_sequences)
    all_phis = np.empty(n_sequences * seq_len)
    for i in range(n_sequences):
        rng = derive_rng(seed, "mc-seq", i)
        ctx: list[int] = []
        s = 0.0
        v = 0.0
        for t in range(seq_len):
            cumsum, phis, var = cache.stats(ctx)
            token = int(np.searchsorted(cumsum, rng.random(), side="right"))
            token = min(token, len(phis) - 1)
            value = float(phis[token])
            all_phis[i * seq_len + t] = value
            s += min(max(value, -clip_bound), clip_bound)
            v += var
            ctx.append(token)
        s_clipped[i] = s
        v_cum[i] = v
    return s_clipped, v_cum, all_phis


def default_toy_provider() -> NgramProvider:
    corpus_a, _ = build_stylized_corpora()
    return ngram_train_text(corpus_a, order=3, smoothing_lambda=0.1)


def check_empirical_martingale(
    provider: Provider, n_tokens: int, seed: int
) -> CheckResult:
    """Mean phi over self-samples must sit within 4 * sqrt(mean_var / N)."""
    seq_len = 64
    n_seqs = max(1, n_tokens // seq_len)
    try:
        _, v_cum, phis = sample_phi_sequences(provider, n_seqs, seq_len, seed)
    except Exception as exc:
        return CheckResult("martingale_empirical", False, {"error": f"{type(exc).__name__}: {exc}"})
    n = len(phis)
    mean_phi = float(np.mean(phis))
    mean_var = float(np.mean(v_cum / seq_len))
    tolerance = 4.0 * math.sqrt(mean_var / n)
    return CheckResult(
        "martingale_empirical",
        abs(mean_phi) <= tolerance,
        {"mean_phi": mean_phi, "tolerance": tolerance, "tokens": n},
    )


def check_freedman_coverage(
    provider: Provider,
    n_sequences: int,
    seq_len: int,
    seed: int,
    clip_bound: float = 10.0,
    gammas: tuple[float, ...] = (1.0, 2.0, 5.0, 10.0, 20.0),
    alpha: float = 0.01,
) -> CheckResult:
    """Empirical lower-tail frequencies must respect the exponential bound
    (evaluated at the largest realized cumulative variance, which upper-bounds
    every sequence's own), and alpha-derived classification must keep the
    in-distribution rate above 1 - alpha."""
    try:
        s_clipped, v_cum, _ = sample_phi_sequences(
            provider, n_sequences, seq_len, seed, clip_bound
        )
    except Exception as exc:
        return CheckResult("freedman_coverage", False, {"error": f"{type(exc).__name__}: {exc}"})
    v_max = float(np.max(v_cum))
    rows = []
    ok = True
    for gamma in gammas:
        empirical = float(np.mean(s_clipped <= -gamma))
        bound = freedman_bound(gamma, v_max, clip_bound)
        se = math.sqrt(max(empirical * (1.0 - empirical), 0.0) / n_sequences)
        ok = ok and empirical <= bound + 3.0 * se
        rows.append({"gamma": gamma, "empirical": empirical, "bound": bound, "mc_se": se})
    # alpha-derived thresholds per sequence's own accumulated variance
    from .stats import threshold_for_alpha

    thresholds = np.array([threshold_for_alpha(alpha, v, clip_bound) for v in v_cum])
    in_rate = float(np.mean(s_clipped > -thresholds))
    ok = ok and in_rate >= 1.0 - alpha
    return CheckResult(
        "freedman_coverage",
        ok,
        {"gammas": rows, "alpha": alpha, "in_distribution_rate": in_rate, "v_max": v_max},
    )


# ---------------------------------------------------------------------------
# Fault injection for the negative path


class UnnormalizedProvider(Provider):
    """Deliberately broken provider: leaks extra probability mass, bypassing
    construction-time validation, so self-samples gain a positive phi drift
    the martingale check must catch."""

    def __init__(self, inner: Provider, scale: float = 1.2):
        self.vocab_size = inner.vocab_size
        self.eos_id = inner.eos_id
        self.tokenizer = inner.tokenizer
        self._inner = inner
        self._log_scale = math.log(scale)

    def next_distribution(self, context_ids) -> TokenDistribution:
        good = self._inner.next_distribution(context_ids)
        bad = object.__new__(TokenDistribution)
        object.__setattr__(bad, "log_probs", good.log_probs + self._log_scale)
        object.__setattr__(bad, "vocab_size", good.vocab_size)
        object.__setattr__(bad, "token_ids", None)
        object.__setattr__(bad, "tail_token_count", 0)
        object.__setattr__(bad, "tail_log_mass", -math.inf)
        return bad


def run_all(
    trials: int = 1000,
    sequences: int = 2000,
    seq_len: int = 64,
    seed: int = 20240,
    provider: Provider | None = None,
    inject_fault: str | None = None,
) -> dict:
    """Run every check and return {checks: [...], all_passed: bool}."""
    prov = provider or default_toy_provider()
    if inject_fault == "unnormalized":
        prov = UnnormalizedProvider(prov)
    elif inject_fault is not None:
        raise ValueError(f"unknown fault {inject_fault!r}")
    checks = [
        check_martingale_zero_mean(trials, seed),
        check_drift_identity(trials, seed),
        check_snr_dominance(max(10, trials // 10), seed),
        check_overlap_formula(),
        check_empirical_martingale(prov, n_tokens=trials * 100, seed=seed),
        check_freedman_coverage(prov, sequences, seq_len, seed),
    ]
    return {
        "checks": [
            {"name": c.name, "passed": c.passed, "details": c.details} for c in checks
        ],
        "all_passed": all(c.passed for c in checks),
    }
