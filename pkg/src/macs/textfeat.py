"""Per-patient TF-IDF unigram+bigram features."""

from __future__ import annotations

import hashlib
import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .datagen import RELEVANT_CATEGORIES
from .errors import InputError

DEFAULT_MAX_FEATURES = 100_000
_SPECIAL = re.compile(r"[^A-Za-z0-9\s]", re.ASCII)


def select_documents(patient):
    relevant = set(RELEVANT_CATEGORIES)
    return [d for d in patient.documents if d.category in relevant]


def concat_normalize(docs) -> str:
    """Chronological concatenation, special characters blanked, lowercased."""
    ordered = sorted(docs, key=lambda d: (d.date, d.doc_id))
    text = " ".join(d.text for d in ordered)
    return _SPECIAL.sub(" ", text).lower()


def tokenize_ngrams(text: str) -> list[str]:
    """All unigrams, then all adjacent-pair bigrams joined by one space."""
    toks = text.split()
    return toks + [f"{a} {b}" for a, b in zip(toks, toks[1:])]


def patient_text(patient) -> str:
    return concat_normalize(select_documents(patient))


@dataclass
class Vocabulary:
    terms: list
    idf: np.ndarray
    max_features: int = DEFAULT_MAX_FEATURES
    index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.idf = np.asarray(self.idf, dtype=float)
        self.index = {t: i for i, t in enumerate(self.terms)}
        if len(self.index) != len(self.terms) or len(self.terms) != self.idf.size:
            raise InputError("vocabulary terms must be unique and aligned with idf")

    def __len__(self):
        return len(self.terms)

    def to_dict(self):
        return {"terms": list(self.terms), "idf": [float(x) for x in self.idf], "max_features": self.max_features}

    @classmethod
    def from_dict(cls, d):
        return cls(list(d["terms"]), np.asarray(d["idf"], dtype=float), int(d["max_features"]))

    def fingerprint(self) -> str:
        payload = json.dumps(self.to_dict(), separators=(",", ":")).encode()
        return hashlib.sha256(payload).hexdigest()


def build_vocabulary(per_patient_texts, max_features: int = DEFAULT_MAX_FEATURES) -> Vocabulary:
    """Keep the ``max_features`` terms with the highest total count.

    Ties are broken lexicographically.  IDF is the smoothed
    ``ln((1 + N) / (1 + df)) + 1`` with one patient text per document.
    """
    texts = list(per_patient_texts)
    if not texts:
        raise InputError("build_vocabulary() needs at least one text")
    if max_features < 1:
        raise InputError("max_features must be positive")
    total: Counter = Counter()
    df: Counter = Counter()
    for text in texts:
        counts = Counter(tokenize_ngrams(text))
        total.update(counts)
        df.update(counts.keys())
    ranked = sorted(total.items(), key=lambda kv: (-kv[1], kv[0]))[:max_features]
    terms = [t for t, _ in ranked]
    n = len(texts)
    idf = np.array([math.log((1 + n) / (1 + df[t])) + 1.0 for t in terms])
    return Vocabulary(terms, idf, max_features)


@dataclass
class SparseVector:
    indices: np.ndarray
    values: np.ndarray

    @property
    def entries(self):
        return list(zip(self.indices.tolist(), self.values.tolist()))

    def norm(self) -> float:
        return float(np.sqrt(np.dot(self.values, self.values)))

    def dense(self, size: int) -> np.ndarray:
        out = np.zeros(size)
        out[self.indices] = self.values
        return out


def vectorize(text: str, vocab: Vocabulary) -> SparseVector:
    counts: Counter = Counter()
    for term in tokenize_ngrams(text):
        j = vocab.index.get(term)
        if j is not None:
            counts[j] += 1
    if not counts:
        return SparseVector(np.zeros(0, dtype=np.int64), np.zeros(0))
    idx = np.array(sorted(counts), dtype=np.int64)
    vals = np.array([counts[j] for j in idx.tolist()], dtype=float) * vocab.idf[idx]
    vals /= np.sqrt(np.dot(vals, vals))
    return SparseVector(idx, vals)


def to_matrix(vectors, n_features: int) -> sp.csr_matrix:
    """Stack SparseVectors into a CSR matrix (rows in input order)."""
    indptr = [0]
    indices = []
    data = []
    for v in vectors:
        indices.append(v.indices)
        data.append(v.values)
        indptr.append(indptr[-1] + v.indices.size)
    ind = np.concatenate(indices) if indices else np.zeros(0, dtype=np.int64)
    dat = np.concatenate(data) if data else np.zeros(0)
    return sp.csr_matrix((dat, ind, np.asarray(indptr)), shape=(len(indptr) - 1, n_features))


def vectorize_many(texts, vocab: Vocabulary) -> sp.csr_matrix:
    return to_matrix([vectorize(t, vocab) for t in texts], len(vocab))
