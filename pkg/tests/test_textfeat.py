import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import doc, make_patient
from macs.datagen import DOCUMENT_CATEGORIES, RELEVANT_CATEGORIES
from macs.errors import InputError
from macs.textfeat import (
    Vocabulary,
    build_vocabulary,
    concat_normalize,
    patient_text,
    select_documents,
    tokenize_ngrams,
    vectorize,
    vectorize_many,
)

WORDS = ["a", "b", "c", "bone", "liver", "mets", "note", "x1"]


def oracle_tfidf(texts, max_features, query):
    """Dense TF-IDF of ``query`` written from the definitions, no shared code."""
    def grams(t):
        toks = t.split()
        return toks + [toks[i] + " " + toks[i + 1] for i in range(len(toks) - 1)]

    total, df = {}, {}
    for t in texts:
        g = grams(t)
        for term in g:
            total[term] = total.get(term, 0) + 1
        for term in set(g):
            df[term] = df.get(term, 0) + 1
    ranked = sorted(total, key=lambda term: (-total[term], term))[:max_features]
    n = len(texts)
    idf = {term: math.log((1 + n) / (1 + df[term])) + 1 for term in ranked}
    tf = {}
    for term in grams(query):
        if term in idf:
            tf[term] = tf.get(term, 0) + 1
    raw = {term: c * idf[term] for term, c in tf.items()}
    norm = math.sqrt(sum(v * v for v in raw.values()))
    vec = [raw.get(term, 0.0) / norm if norm else 0.0 for term in ranked]
    return ranked, vec


def random_corpus(rng):
    texts = [" ".join(rng.choice(WORDS, size=rng.integers(0, 31))) for _ in range(rng.integers(1, 11))]
    return texts


# ---------------------------------------------------------------- documents


def test_select_documents_filters_categories():
    rng = np.random.default_rng(0)
    docs = [doc(f"d{i}", DOCUMENT_CATEGORIES[int(rng.integers(len(DOCUMENT_CATEGORIES)))],
                dt.date(2013, 1, 1 + i), f"t{i}") for i in range(10)]
    docs[0] = doc("d0", "radiology report", dt.date(2013, 1, 1), "t0")
    p = make_patient(docs=docs)
    want = {d.doc_id for d in docs if d.category in set(RELEVANT_CATEGORIES)}
    assert {d.doc_id for d in select_documents(p)} == want
    assert len(RELEVANT_CATEGORIES) == 4 and len(DOCUMENT_CATEGORIES) == 24


def test_normalization_and_order():
    assert concat_normalize([doc("1", "visit note", dt.date(2013, 1, 1), "Bone METS!")]).split() == ["bone", "mets"]
    docs = [doc("b", "visit note", dt.date(2013, 2, 1), "second"),
            doc("a", "visit note", dt.date(2013, 1, 1), "first;"),
            doc("c", "visit note", dt.date(2013, 2, 1), "third")]
    assert concat_normalize(docs).split() == ["first", "second", "third"]
    assert patient_text(make_patient(docs=[])) == ""


def test_tokenize_ngrams_example():
    assert tokenize_ngrams("bone mets found") == ["bone", "mets", "found", "bone mets", "mets found"]
    assert tokenize_ngrams("") == []


# ---------------------------------------------------------------- vocabulary


def test_vocabulary_examples():
    v = build_vocabulary(["a b", "a"], max_features=10)
    assert set(v.terms) == {"a", "b", "a b"}
    assert v.idf[v.index["a"]] == 1.0
    assert v.idf[v.index["b"]] == pytest.approx(math.log(3 / 2) + 1)
    assert build_vocabulary(["a b", "a"], max_features=1).terms == ["a"]
    with pytest.raises(InputError):
        build_vocabulary([])


def test_vectorize_example():
    v = build_vocabulary(["a b", "a"], max_features=10)
    vec = vectorize("a a b", v)
    terms, want = oracle_tfidf(["a b", "a"], 10, "a a b")
    np.testing.assert_allclose(vec.dense(len(v)), [want[terms.index(t)] for t in v.terms], atol=1e-15)
    assert vectorize("zzz", v).indices.size == 0


@pytest.mark.parametrize("seed", range(100))
def test_vectorize_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    texts = random_corpus(rng)
    cap = int(rng.integers(1, 40))
    vocab = build_vocabulary(texts, cap)
    for text in texts + [" ".join(rng.choice(WORDS, size=5))]:
        terms, want = oracle_tfidf(texts, cap, text)
        assert vocab.terms == terms
        got = vectorize(text, vocab).dense(len(vocab))
        assert np.max(np.abs(got - np.asarray(want))) <= 1e-12 if want else got.size == 0


@given(st.lists(st.text(alphabet="abc ", max_size=30), min_size=1, max_size=8), st.integers(1, 30))
def test_vector_norm_and_sorted_indices(texts, cap):
    vocab = build_vocabulary(texts, cap)
    for t in texts:
        v = vectorize(t, vocab)
        assert np.all(np.diff(v.indices) > 0)
        assert np.all(v.values != 0)
        assert v.norm() == 0 or abs(v.norm() - 1) <= 1e-9
    assert len(vocab) <= cap
    assert np.all(vocab.idf > 0)


@given(st.lists(st.text(alphabet="abcd ", max_size=30), min_size=1, max_size=8), st.integers(1, 20),
       st.integers(0, 20))
def test_vocabulary_monotone_in_cap(texts, cap, extra):
    small = set(build_vocabulary(texts, cap).terms)
    assert small <= set(build_vocabulary(texts, cap + extra).terms)


@given(st.lists(st.text(alphabet="abc ", max_size=20), min_size=1, max_size=6), st.randoms())
def test_vocabulary_order_insensitive(texts, r):
    shuffled = list(texts)
    r.shuffle(shuffled)
    assert build_vocabulary(texts, 15).to_dict() == build_vocabulary(shuffled, 15).to_dict()


def test_vocabulary_roundtrip_and_fingerprint():
    v = build_vocabulary(["bone mets", "liver mets", "note"], 50)
    w = Vocabulary.from_dict(v.to_dict())
    assert w.terms == v.terms and w.fingerprint() == v.fingerprint()
    assert build_vocabulary(["other"], 50).fingerprint() != v.fingerprint()
    with pytest.raises(InputError):
        Vocabulary(["a", "a"], [1.0, 1.0])


def test_vectorize_many_rows():
    texts = ["a b", "b c", ""]
    vocab = build_vocabulary(texts, 10)
    X = vectorize_many(texts, vocab)
    assert X.shape == (3, len(vocab))
    for i, t in enumerate(texts):
        np.testing.assert_array_equal(X[i].toarray().ravel(), vectorize(t, vocab).dense(len(vocab)))
