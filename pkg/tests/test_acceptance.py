"""Acceptance suite: one test per criterion, at the stated scale and
tolerance, printing one PASS/FAIL line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines alongside the pytest verdicts.
"""

from __future__ import annotations

import dataclasses
import io
import math
from contextlib import contextmanager

import numpy as np
import pytest

from cllkit.decoding import (
    HintedConfig,
    MixSchedule,
    decode,
    fuse_logprobs,
    plain_decode,
    prepare_target_context,
)
from cllkit.pipeline import VerifierSpec, realign, score_text, verify, write_realigned_jsonl
from cllkit.providers import (
    CharTokenizer,
    MixtureOfSequencesProvider,
    SamplerConfig,
    derive_rng,
    derive_seed,
)
from cllkit.stats import (
    ContextEnsemble,
    TokenDistribution,
    analytic_snr_decomposition,
    clip_phi,
    entropy,
    freedman_bound,
    threshold_for_alpha,
)
from cllkit.theory import sample_phi_sequences
from cllkit.weighting import gamma_of_phi, gradient_scale, idft_token_loss
from cllkit.worlds import build_arith_world


@contextmanager
def criterion(name: str):
    try:
        yield
    except Exception:
        print(f"{name}: FAIL")
        raise
    print(f"{name}: PASS")


def _random_dist(rng, v):
    return TokenDistribution.from_probs(rng.dirichlet(np.full(v, rng.uniform(0.2, 3.0))))


# ---------------------------------------------------------------------------


def test_a1_zero_conditional_mean():
    with criterion("A1 zero conditional mean (1000 dists, |sum p*phi| < 1e-10)"):
        rng = derive_rng(101, "a1")
        for _ in range(1000):
            v = int(rng.integers(2, 65))
            d = _random_dist(rng, v)
            mean = float(np.sum(d.probs() * (np.maximum(d.log_probs, -50.0) + entropy(d))))
            assert abs(mean) < 1e-10


def test_a2_drift_identity():
    with criterion("A2 drift identity (1000 pairs, gap < 1e-10)"):
        from cllkit.stats import expected_phi_under

        rng = derive_rng(102, "a2")
        for _ in range(1000):
            v = int(rng.integers(2, 65))
            p = _random_dist(rng, v)
            q = _random_dist(rng, v)
            lhs = expected_phi_under(q, p)
            # independent oracle: raw summations for KL and the entropies
            pp, qp = p.probs(), q.probs()
            lp = np.maximum(p.log_probs, -50.0)
            lq = np.maximum(q.log_probs, -50.0)
            kl = float(np.sum(qp * (lq - lp)))
            h_p = -float(np.sum(pp * lp))
            h_q = -float(np.sum(qp * lq))
            assert abs(lhs - (-kl + h_p - h_q)) < 1e-10


def test_a3_empirical_martingale(student_ngram):
    with criterion("A3 empirical martingale (1e5 tokens, |mean phi| <= 4*sqrt(V/N))"):
        seq_len = 64
        n_seqs = 1563  # 100,032 tokens
        _, v_cum, phis = sample_phi_sequences(student_ngram, n_seqs, seq_len, seed=103)
        n = len(phis)
        assert n >= 100_000
        mean_phi = float(np.mean(phis))
        mean_step_var = float(np.mean(v_cum / seq_len))
        assert abs(mean_phi) <= 4.0 * math.sqrt(mean_step_var / n)


def _brute_force_snr(ensemble: ContextEnsemble):
    # direct enumeration of the joint (context, token) moments
    vals_ll, vals_cll, w0, w1 = [], [], [], []
    for p, q, w in ensemble.entries:
        h = entropy(p)
        lp = np.maximum(p.log_probs, -50.0)
        pp, qp = p.probs(), q.probs()
        for x in range(p.vocab_size):
            vals_ll.append(float(lp[x]))
            vals_cll.append(float(lp[x]) + h)
            w0.append(w * float(pp[x]))
            w1.append(w * float(qp[x]))
    vals_ll, vals_cll = np.asarray(vals_ll), np.asarray(vals_cll)
    w0, w1 = np.asarray(w0), np.asarray(w1)

    def snr(vals):
        e0, e1 = float(np.sum(w0 * vals)), float(np.sum(w1 * vals))
        var0 = float(np.sum(w0 * vals * vals)) - e0 * e0
        return (e1 - e0) ** 2 / var0

    return snr(vals_ll), snr(vals_cll)


def test_a4_snr_dominance():
    with criterion("A4 SNR dominance (100 ensembles; brute-force match < 1e-9)"):
        rng = derive_rng(104, "a4")
        checked = 0
        while checked < 100:
            v = int(rng.integers(3, 12))
            n = int(rng.integers(2, 6))
            weights = rng.dirichlet(np.ones(n))
            entries = tuple(
                (_random_dist(rng, v), _random_dist(rng, v), float(w)) for w in weights
            )
            ens = ContextEnsemble(entries=entries)
            decomp = analytic_snr_decomposition(ens)
            if abs(decomp.delta) < 1e-6 or decomp.sigma_h_sq < 1e-8:
                continue
            bf_ll, bf_cll = _brute_force_snr(ens)
            assert abs(decomp.snr_ll - bf_ll) < 1e-9
            assert abs(decomp.snr_cll - bf_cll) < 1e-9
            assert decomp.snr_cll > decomp.snr_ll
            checked += 1
        # equal-entropy contexts: permutations of one distribution
        for _ in range(20):
            v = int(rng.integers(3, 12))
            n = int(rng.integers(2, 5))
            base = rng.dirichlet(np.ones(v))
            weights = rng.dirichlet(np.ones(n))
            entries = tuple(
                (
                    TokenDistribution.from_probs(rng.permutation(base)),
                    _random_dist(rng, v),
                    float(w),
                )
                for w in weights
            )
            decomp = analytic_snr_decomposition(ContextEnsemble(entries=entries))
            assert abs(decomp.snr_cll - decomp.snr_ll) < 1e-9


def test_a5_freedman_coverage(student_ngram):
    with criterion("A5 Freedman coverage (1e4 x 64 tokens, 5 gammas)"):
        clip = 10.0
        n_seqs, seq_len = 10_000, 64
        s_clipped, v_cum, _ = sample_phi_sequences(
            student_ngram, n_seqs, seq_len, seed=105, clip_bound=clip
        )
        v_max = float(np.max(v_cum))
        for gamma in (1.0, 2.0, 5.0, 10.0, 20.0):
            empirical = float(np.mean(s_clipped <= -gamma))
            bound = freedman_bound(gamma, v_max, clip)
            se = math.sqrt(max(empirical * (1.0 - empirical), 0.0) / n_seqs)
            assert empirical <= bound + 3.0 * se, (gamma, empirical, bound)
        # alpha-derived classification keeps the in-distribution rate high
        thresholds = np.array([threshold_for_alpha(0.01, v, clip) for v in v_cum])
        assert float(np.mean(s_clipped > -thresholds)) >= 0.99


def _generate_and_score(gen_provider, score_provider, n, length, seed):
    scores = []
    for i in range(n):
        rng = derive_rng(seed, "gen", i)
        ctx: list[int] = []
        total = 0.0
        for _ in range(length):
            d_gen = gen_provider.next_distribution(ctx)
            probs = d_gen.probs()
            token = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
            token = min(token, d_gen.vocab_size - 1)
            d_score = score_provider.next_distribution(ctx)
            value = float(np.maximum(d_score.log_probs[token], -50.0)) + entropy(d_score)
            total += clip_phi(value, 10.0)
            ctx.append(token)
        scores.append(total)
    return np.asarray(scores)


def test_a6_separation(student_ngram, foreign_ngram):
    with criterion("A6 separation (AUC >= 0.9 on 200 vs 200, length 128)"):
        self_scores = _generate_and_score(student_ngram, student_ngram, 200, 128, seed=106)
        foreign_scores = _generate_and_score(foreign_ngram, student_ngram, 200, 128, seed=1060)
        assert float(np.mean(self_scores)) > float(np.mean(foreign_scores))
        # AUC by pairwise counting
        wins = sum(
            1.0 if s > f else (0.5 if s == f else 0.0)
            for s in self_scores
            for f in foreign_scores
        )
        auc = wins / (len(self_scores) * len(foreign_scores))
        assert auc >= 0.9, auc


def test_a7_idft_identities():
    with criterion("A7 IDFT identities (gamma, loss, monotonicity, gradients)"):
        assert gamma_of_phi(0.0) == 1.0
        # phi = 0 loss equals -p log p
        for p in (0.01, 0.3, 0.9, 0.999):
            lp = math.log(p)
            loss = idft_token_loss(lp, gamma_of_phi(0.0))
            assert abs(loss - (-p * lp)) < 1e-12
        # monotone decreasing in gamma over the grid
        for p in np.linspace(0.01, 0.99, 25):
            lp = math.log(p)
            grid = [idft_token_loss(lp, g) for g in np.linspace(0.1, 10.0, 40)]
            assert all(a > b for a, b in zip(grid, grid[1:]))
        # finite-difference gradient of -w log p on a 3-logit softmax
        rng = derive_rng(107, "a7")
        h = 1e-5
        for _ in range(50):
            z = rng.normal(size=3)
            target = int(rng.integers(3))
            p = np.exp(z - np.max(z))
            p /= p.sum()
            w = gradient_scale("idft", math.log(p[target]), clip_phi(float(rng.normal())))

            def loss_at(zv):
                q = np.exp(zv - np.max(zv))
                q /= q.sum()
                return -w * math.log(q[target])

            for j in range(3):
                zp, zm = z.copy(), z.copy()
                zp[j] += h
                zm[j] -= h
                numeric = (loss_at(zp) - loss_at(zm)) / (2 * h)
                analytic = w * (p[j] - (1.0 if j == target else 0.0))
                assert abs(numeric - analytic) < 1e-6
                sft_grad = p[j] - (1.0 if j == target else 0.0)
                if abs(sft_grad) > 1e-9:
                    assert abs(numeric / sft_grad - w) < 1e-6


def test_a8_hinted_endpoints():
    with criterion("A8 decode endpoints (beta=0 and lambda=1 replays, 50 items)"):
        world = build_arith_world(n_items=50, solvable_fraction=0.5, seed=7)
        for i, item in enumerate(world.items):
            seed = 800 + i
            cfg0 = dataclasses.replace(
                world.config, schedule=dataclasses.replace(world.config.schedule, beta=0.0)
            )
            res = decode(item.question, item.reference_answer, cfg0, world.provider, seed=seed)
            target = prepare_target_context(
                item.question, item.reference_answer, cfg0, world.provider,
                derive_rng(seed, "analysis"),
            )
            ref, _ = plain_decode(
                world.provider, target, cfg0.sampler, derive_rng(seed, "decode"), cfg0.max_len
            )
            pre = next((j for j, t in enumerate(res.trace) if t.mode != "mixed"), len(res.trace))
            assert list(res.token_ids[:pre]) == ref[:pre]

            cfg1 = dataclasses.replace(
                world.config, schedule=MixSchedule(mode="constant", value=1.0)
            )
            res1 = decode(item.question, item.reference_answer, cfg1, world.provider, seed=seed)
            ref1, _ = plain_decode(
                world.provider,
                world.provider.tokenizer.encode(item.question),
                cfg1.sampler,
                derive_rng(seed, "decode"),
                cfg1.max_len,
            )
            assert list(res1.token_ids) == ref1


def test_a9_fusion_normalization():
    with criterion("A9 fusion normalization (1e4 triples < 1e-9; symmetric < 1e-12)"):
        rng = derive_rng(109, "a9")
        for _ in range(10_000):
            v = int(rng.integers(2, 33))
            a = TokenDistribution.from_probs(rng.dirichlet(np.ones(v)))
            b = TokenDistribution.from_probs(rng.dirichlet(np.ones(v)))
            fused = fuse_logprobs(a, b, float(rng.random()))
            assert abs(float(np.logaddexp.reduce(fused.log_probs))) < 1e-9
        sym = fuse_logprobs(
            TokenDistribution.from_probs([0.8, 0.2]),
            TokenDistribution.from_probs([0.2, 0.8]),
            0.5,
        )
        assert abs(sym.probs()[0] - 0.5) < 1e-12
        assert abs(sym.probs()[1] - 0.5) < 1e-12


def _splitter_world(natural: bool):
    shadow = "given {question} answer {answer} explain "
    filled = shadow.format(question="q", answer="y")
    student = "sure \\boxed{y} fin" if natural else "sure thing"
    texts = {
        "q": [(student, 1.0)],
        filled: [("note ## " + student, 1.0)],
    }
    tok = CharTokenizer(set(filled + "note ## " + student + "\\boxed{}"))
    prov = MixtureOfSequencesProvider(
        tok, texts, noise_open=0.02, noise_locked=1e-4, lock_spans=["note ## "]
    )
    cfg = HintedConfig(
        schedule=MixSchedule(mode="linear", beta=10.0),
        shadow_prompt=shadow,
        boundary_marker="## ",
        splitter="\\boxed{",
        max_len=60,
        analysis_max_tokens=40,
        sampler=SamplerConfig(temperature=0.0),
        analysis_sampler=SamplerConfig(temperature=0.0),
    )
    return prov, tok, cfg


def test_a10_splitter_eos_machinery():
    with criterion("A10 splitter/EOS machinery (forced and natural paths)"):
        for natural in (False, True):
            prov, tok, cfg = _splitter_world(natural)
            res = decode("q", "y", cfg, prov, seed=10)
            assert "\\boxed{" in res.text  # full splitter always present
            modes = [t.mode for t in res.trace]
            if not natural:
                assert "forced" in modes  # EOS-replacement path exercised
            # drafter_only is monotone: once a non-mixed mode appears, mixed
            # never returns
            first_switch = next((i for i, m in enumerate(modes) if m != "mixed"), len(modes))
            assert all(m != "mixed" for m in modes[first_switch:])
            # every post-splitter (drafter_only) token equals the drafter's
            # greedy choice, replayed independently
            ctx = tok.encode("q")
            emitted = list(res.token_ids)
            pos = 0
            for t in res.trace:
                if t.mode == "drafter_only":
                    d = prov.next_distribution(ctx)
                    assert t.token == int(np.argmax(d.log_probs))
                if pos < len(emitted) and t.token == emitted[pos]:
                    ctx.append(emitted[pos])
                    pos += 1


def test_a11_realignment_contract(arith_world):
    with criterion("A11 realignment contract (exact rollout subset; re-verify; bytes)"):
        world = arith_world
        runs = []
        for workers in (4, 2):
            realigned, dropped, report = realign(
                world.items, world.provider, world.config, VerifierSpec(),
                SamplerConfig(), seed=0, workers=workers,
            )
            fh = io.StringIO()
            write_realigned_jsonl(fh, realigned)
            runs.append((realigned, report, fh.getvalue()))
        (realigned, report, bytes1), (_, _, bytes2) = runs
        assert bytes1 == bytes2  # byte-identical across runs
        rollout_ids = {r.id for r in realigned if r.source == "rollout"}
        assert rollout_ids == set(world.solvable_ids)
        assert report.hinted > 0
        for r in realigned:
            item = next(i for i in world.items if i.id == r.id)
            assert verify(r.response, item.reference_answer, VerifierSpec())
        for stats in report.per_source.values():
            f = stats["fractions"]
            assert f["-5"] >= f["-3"] >= f["-1"]


def test_a12_beta_trend(arith_world):
    with criterion("A12 beta trend (mean phi minimal at beta=0, beta=10 above it)"):
        world = arith_world
        unsolved = [it for it in world.items if it.id not in world.solvable_ids]
        means = {}
        for beta in (0.0, 1.0, 3.0, 5.0, 10.0):
            cfg = dataclasses.replace(
                world.config, schedule=dataclasses.replace(world.config.schedule, beta=beta)
            )
            phis = []
            for item in unsolved:
                res = decode(
                    item.question, item.reference_answer, cfg, world.provider,
                    seed=derive_seed(112, item.id),
                )
                phis.extend(
                    r.phi for r in score_text(world.provider, item.question, res.text, 10.0)
                )
            means[beta] = float(np.mean(phis))
        assert means[10.0] > means[0.0]
        assert means[0.0] == min(means.values())
