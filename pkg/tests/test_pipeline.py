from __future__ import annotations

import io
import json
import math

import numpy as np
import pytest

from cllkit.errors import InvalidArgument
from cllkit.pipeline import (
    DatasetItem,
    VerifierSpec,
    extract_last_boxed,
    idft_export_rows,
    read_corpus,
    realign,
    score_dataset,
    score_text,
    verify,
    write_realigned_jsonl,
    write_scored_jsonl,
)
from cllkit.providers import SamplerConfig, derive_rng
from cllkit.stats import DiscriminantConfig
from cllkit.weighting import WeightConfig
from cllkit.worlds import build_arith_world, build_stubborn_world


# ---------------------------------------------------------------------------
# verifier


def test_verify_boxed_basic():
    assert verify("the sum works out to \\boxed{55}.", "55", VerifierSpec())


def test_verify_last_boxed_wins():
    resp = "first \\boxed{12} then finally \\boxed{13}"
    assert verify(resp, "13", VerifierSpec())
    assert not verify(resp, "12", VerifierSpec())


def test_verify_no_boxed_is_false():
    assert not verify("no box here", "55", VerifierSpec())


def test_boxed_extraction_brace_balanced():
    assert extract_last_boxed("x \\boxed{\\frac{1}{2}} y") == "\\frac{1}{2}"
    assert extract_last_boxed("\\boxed{unclosed") is None


def test_verify_normalization():
    spec = VerifierSpec()
    assert verify("\\boxed{  Hello   World }", "hello world", spec)
    strict = VerifierSpec(lowercase=False)
    assert not verify("\\boxed{Hello}", "hello", strict)


def test_verify_normalized_match_mode():
    spec = VerifierSpec(kind="normalized_match")
    assert verify("  YES  ", "yes", spec)
    assert not verify("no", "yes", spec)


# ---------------------------------------------------------------------------
# corpus I/O


def test_read_corpus_and_duplicate_ids(tmp_path):
    path = tmp_path / "corpus.jsonl"
    path.write_text(
        '{"id": "a", "question": "q1", "answer": "1"}\n'
        '{"id": "b", "question": "q2", "answer": "2"}\n'
    )
    items = read_corpus(str(path))
    assert [i.id for i in items] == ["a", "b"]
    path.write_text(
        '{"id": "a", "question": "q1", "answer": "1"}\n'
        '{"id": "a", "question": "q2", "answer": "2"}\n'
    )
    with pytest.raises(InvalidArgument):
        read_corpus(str(path))


# ---------------------------------------------------------------------------
# scoring


def test_score_empty_corpus_is_empty_report():
    scored, report = score_dataset([], None, DiscriminantConfig(alpha=0.01))
    assert scored == [] and report.items == 0


def test_score_self_generations_near_zero_mean(arith_world):
    # provider's own rollouts should score near the martingale equilibrium
    from cllkit.decoding import plain_decode

    world = arith_world
    items = []
    for i, item in enumerate(world.items[:20]):
        rng = derive_rng(900, "roll", i)
        tokens, _ = plain_decode(
            world.provider, world.provider.tokenizer.encode(item.question), SamplerConfig(),
            rng, world.config.max_len,
        )
        items.append(
            DatasetItem(id=item.id, question=item.question,
                        reference_answer=world.provider.tokenizer.decode(tokens))
        )
    scored, report = score_dataset(items, world.provider, DiscriminantConfig(alpha=0.01))
    assert report.failed == 0
    assert abs(report.avg_phi) < 0.3  # loose Monte-Carlo bound at this sample size
    assert report.fractions["-5"] >= report.fractions["-3"] >= report.fractions["-1"]


def test_score_foreign_text_scores_lower(student_ngram, foreign_ngram):
    from cllkit.decoding import plain_decode

    tok = student_ngram.tokenizer
    items_self, items_foreign = [], []
    for i in range(30):
        s, _ = plain_decode(student_ngram, [], SamplerConfig(), derive_rng(70, "s", i), 64)
        f, _ = plain_decode(foreign_ngram, [], SamplerConfig(), derive_rng(70, "f", i), 64)
        items_self.append(DatasetItem(id=f"s{i}", question=" ", reference_answer=tok.decode(s)))
        items_foreign.append(DatasetItem(id=f"f{i}", question=" ", reference_answer=tok.decode(f)))
    _, rep_self = score_dataset(items_self, student_ngram, DiscriminantConfig(alpha=0.01))
    _, rep_foreign = score_dataset(items_foreign, student_ngram, DiscriminantConfig(alpha=0.01))
    assert rep_self.mean_s_clipped > rep_foreign.mean_s_clipped


def test_score_jsonl_schema(arith_world, tmp_path):
    world = arith_world
    items = [
        DatasetItem(id="one", question=world.items[0].question,
                    reference_answer="i think sum of 7 and 1 makes \\boxed{8} ok")
    ]
    config = DiscriminantConfig(alpha=0.01)
    scored, _ = score_dataset(items, world.provider, config)
    fh = io.StringIO()
    write_scored_jsonl(fh, scored, config)
    obj = json.loads(fh.getvalue())
    assert set(obj) == {"id", "s_final", "s_clipped_final", "verdict", "avg_phi", "frac_ge", "phi"}
    assert set(obj["frac_ge"]) == {"-1", "-3", "-5"}
    assert len(obj["phi"]) == len(items[0].reference_answer)


def test_score_per_item_failures_do_not_kill_run(arith_world):
    world = arith_world
    items = [
        DatasetItem(id="bad", question="zzz unknown chars", reference_answer="???"),
        DatasetItem(id="good", question=world.items[0].question,
                    reference_answer="i think sum"),
    ]
    scored, report = score_dataset(items, world.provider, DiscriminantConfig(alpha=0.01))
    assert report.failed == 1
    assert scored[0].error is not None and scored[1].score is not None


# ---------------------------------------------------------------------------
# realignment


def test_realign_all_rollouts_correct():
    world = build_arith_world(n_items=8, solvable_fraction=1.0, seed=13)
    realigned, dropped, report = realign(
        world.items, world.provider, world.config, VerifierSpec(), SamplerConfig(),
        seed=3,
    )
    assert report.rollout == 8 and report.hinted == 0 and report.dropped == 0
    assert all(r.source == "rollout" for r in realigned)


def test_realign_stubborn_world_drops_everything():
    world = build_stubborn_world(n_items=5, seed=11)
    realigned, dropped, report = realign(
        world.items, world.provider, world.config, VerifierSpec(), SamplerConfig(),
        seed=3,
    )
    assert realigned == []
    assert report.dropped + report.failed == 5


def test_realign_contract_and_determinism(arith_world):
    world = arith_world
    out1 = realign(world.items, world.provider, world.config, VerifierSpec(),
                   SamplerConfig(), seed=0, workers=4)
    out2 = realign(world.items, world.provider, world.config, VerifierSpec(),
                   SamplerConfig(), seed=0, workers=2)
    realigned1, dropped1, report1 = out1
    realigned2, dropped2, report2 = out2
    fh1, fh2 = io.StringIO(), io.StringIO()
    write_realigned_jsonl(fh1, realigned1)
    write_realigned_jsonl(fh2, realigned2)
    assert fh1.getvalue() == fh2.getvalue()  # byte-identical across runs/workers
    rollout_ids = {r.id for r in realigned1 if r.source == "rollout"}
    assert rollout_ids == set(world.solvable_ids)
    # every emitted item re-verifies
    for r in realigned1:
        item = next(i for i in world.items if i.id == r.id)
        assert verify(r.response, item.reference_answer, VerifierSpec())
    # output preserves input order
    emitted_order = [r.id for r in realigned1]
    assert emitted_order == [i.id for i in world.items if i.id in set(emitted_order)]


def test_realign_report_fraction_monotonicity(arith_world):
    world = arith_world
    _, _, report = realign(world.items, world.provider, world.config, VerifierSpec(),
                           SamplerConfig(), seed=0, workers=4)
    for source, stats in report.per_source.items():
        f = stats["fractions"]
        assert f["-5"] >= f["-3"] >= f["-1"]


# ---------------------------------------------------------------------------
# weight export


def test_idft_export_schemes(arith_world):
    world = arith_world
    realigned, _, _ = realign(world.items[:6], world.provider, world.config,
                              VerifierSpec(), SamplerConfig(), seed=0)
    rows_sft = idft_export_rows(realigned, world.provider, WeightConfig(scheme="sft"))
    assert all(all(r.weight == 1.0 for r in row[4]) for row in rows_sft)
    rows_ht = idft_export_rows(
        realigned, world.provider, WeightConfig(scheme="hard_truncate", tau=-5.0)
    )
    for row in rows_ht:
        for rec in row[4]:
            assert rec.weight == (0.0 if rec.phi_clipped <= -5.0 else 1.0)


def test_idft_export_weights_recomputable(arith_world):
    # independent recomputation: weight must equal exp(gamma * log_prob)
    world = arith_world
    realigned, _, _ = realign(world.items[:4], world.provider, world.config,
                              VerifierSpec(), SamplerConfig(), seed=0)
    rows = idft_export_rows(realigned, world.provider, WeightConfig(scheme="idft"))
    for _, _, log_probs, phis, records in rows:
        for lp, phi_value, rec in zip(log_probs, phis, records):
            clipped = min(max(phi_value, -10.0), 10.0)
            gamma = math.exp(-clipped)
            assert rec.gamma == pytest.approx(gamma, rel=1e-12)
            assert rec.weight == pytest.approx(math.exp(gamma * lp), rel=1e-12)
            assert rec.loss >= 0.0


def test_idft_export_empty_rejected(arith_world):
    with pytest.raises(InvalidArgument):
        idft_export_rows([], arith_world.provider, WeightConfig(scheme="sft"))
