from __future__ import annotations

from cllkit.theory import (
    UnnormalizedProvider,
    check_drift_identity,
    check_empirical_martingale,
    check_martingale_zero_mean,
    check_overlap_formula,
    check_snr_dominance,
    default_toy_provider,
    run_all,
)


def test_individual_checks_pass(student_ngram):
    assert check_martingale_zero_mean(200, seed=1).passed
    assert check_drift_identity(200, seed=1).passed
    assert check_snr_dominance(15, seed=1).passed
    assert check_overlap_formula().passed
    assert check_empirical_martingale(student_ngram, n_tokens=20_000, seed=1).passed


def test_run_all_passes_at_reduced_scale():
    report = run_all(trials=200, sequences=400, seq_len=32, seed=5)
    assert report["all_passed"], report
    names = {c["name"] for c in report["checks"]}
    assert names == {
        "martingale_zero_mean",
        "drift_identity",
        "snr_dominance",
        "overlap_formula",
        "martingale_empirical",
        "freedman_coverage",
    }


def test_unnormalized_provider_fails_named_checks():
    report = run_all(trials=100, sequences=200, seq_len=32, seed=5,
                     inject_fault="unnormalized")
    assert not report["all_passed"]
    failed = {c["name"] for c in report["checks"] if not c["passed"]}
    assert "martingale_empirical" in failed


def test_unnormalized_provider_leaks_mass(student_ngram):
    import numpy as np

    bad = UnnormalizedProvider(student_ngram, scale=1.2)
    d = bad.next_distribution([])
    assert float(np.exp(d.log_probs).sum()) > 1.1


def test_default_toy_provider_is_deterministic():
    p1 = default_toy_provider()
    p2 = default_toy_provider()
    import numpy as np

    assert np.array_equal(
        p1.next_distribution([]).log_probs, p2.next_distribution([]).log_probs
    )
