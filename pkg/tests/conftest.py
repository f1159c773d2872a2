from __future__ import annotations

import pytest

from cllkit.providers import CharTokenizer, ngram_train_text
from cllkit.worlds import build_arith_world, build_stylized_corpora


@pytest.fixture(scope="session")
def arith_world():
    return build_arith_world(n_items=40, solvable_fraction=0.6, seed=7)


@pytest.fixture(scope="session")
def corpora():
    return build_stylized_corpora()


@pytest.fixture(scope="session")
def shared_tokenizer(corpora):
    corpus_a, corpus_b = corpora
    return CharTokenizer.from_corpus(corpus_a + corpus_b)


@pytest.fixture(scope="session")
def student_ngram(corpora, shared_tokenizer):
    corpus_a, _ = corpora
    return ngram_train_text(corpus_a, order=3, smoothing_lambda=0.1, tokenizer=shared_tokenizer)


@pytest.fixture(scope="session")
def foreign_ngram(corpora, shared_tokenizer):
    _, corpus_b = corpora
    return ngram_train_text(corpus_b, order=3, smoothing_lambda=0.1, tokenizer=shared_tokenizer)
