"""Synthetic corpora with passage-localized relevance for desk-scale runs.

Each query gets a disjoint set of relevant documents whose query terms
are concentrated in a single window, and distractor documents with the
same whole-document term counts spread uniformly. Whole-document scoring
cannot separate the two groups; passage-level scoring can.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import ingest_corpus
from .passage import SegmentationParams, segment


@dataclass
class SyntheticSpec:
    n_docs: int = 500
    n_queries: int = 30
    doc_tokens: int = 900
    window_len: int = 300
    relevant_per_query: int = 8
    distractors_per_query: int = 8
    query_terms: int = 3
    occurrences_per_term: int = 8
    # Distractors carry slightly MORE total query-term mass, spread over the
    # whole document, so whole-document scoring cannot separate them from
    # relevant documents whose mass sits in one window.
    distractor_occurrences: int | None = None
    vocab_size: int = 2000
    stopword_rate: float = 0.3
    seed: int = 13

    def __post_init__(self):
        if self.distractor_occurrences is None:
            self.distractor_occurrences = self.occurrences_per_term + 2


_FILLER_STOPWORDS = (
    "the", "of", "and", "to", "in", "that", "it", "with", "for", "was",
    "on", "be", "at", "by", "this", "had", "not", "are", "but", "from",
)


def _background_vocab(size: int) -> list[str]:
    return [f"bg{i:04d}x" for i in range(size)]


def _query_term(q: int, t: int) -> str:
    # Invented tokens that survive stemming and never hit the stopword list.
    return f"qterm{q:02d}{chr(ord('a') + t)}x"


def generate(spec: SyntheticSpec, out_dir: str | Path) -> dict[str, Path]:
    """Write corpus.jsonl, topics.tsv, doc qrels and char-span passage qrels.

    Returns the paths keyed by artifact name. Deterministic for a fixed
    spec (including its seed).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    vocab = _background_vocab(spec.vocab_size)
    # Zipf-ish background distribution.
    ranks = np.arange(1, spec.vocab_size + 1, dtype=float)
    probs = (1.0 / ranks) / (1.0 / ranks).sum()

    def background(n: int) -> list[str]:
        words = []
        picks = rng.choice(spec.vocab_size, size=n, p=probs)
        stop_draws = rng.random(n)
        stop_picks = rng.integers(0, len(_FILLER_STOPWORDS), size=n)
        for i in range(n):
            if stop_draws[i] < spec.stopword_rate:
                words.append(_FILLER_STOPWORDS[stop_picks[i]])
            else:
                words.append(vocab[picks[i]])
        return words

    per_query_docs = spec.relevant_per_query + spec.distractors_per_query
    if spec.n_queries * per_query_docs > spec.n_docs:
        raise ValueError("not enough documents for the requested queries")
    n_windows = -(-spec.doc_tokens // spec.window_len)

    docs: list[tuple[str, list[str]]] = []
    doc_roles: dict[str, tuple[int, bool, int]] = {}  # doc -> (query, relevant, window)
    doc_no = 0
    for q in range(spec.n_queries):
        terms = [_query_term(q, t) for t in range(spec.query_terms)]
        for r in range(spec.relevant_per_query):
            doc_id = f"doc{doc_no:04d}"
            doc_no += 1
            tokens = background(spec.doc_tokens)
            # All topical occurrences land inside one non-first window.
            window = 1 + int(rng.integers(0, n_windows - 1)) if n_windows > 1 else 0
            lo = window * spec.window_len
            hi = min(lo + spec.window_len, spec.doc_tokens)
            for term in terms:
                occ = spec.occurrences_per_term + int(rng.integers(-1, 2))
                for pos in rng.choice(np.arange(lo, hi), size=occ, replace=False):
                    tokens[pos] = term
            docs.append((doc_id, tokens))
            doc_roles[doc_id] = (q, True, window)
        for r in range(spec.distractors_per_query):
            doc_id = f"doc{doc_no:04d}"
            doc_no += 1
            tokens = background(spec.doc_tokens)
            for term in terms:
                occ = spec.distractor_occurrences + int(rng.integers(-1, 2))
                for pos in rng.choice(spec.doc_tokens, size=occ, replace=False):
                    tokens[pos] = term
            docs.append((doc_id, tokens))
            doc_roles[doc_id] = (q, False, -1)
    while doc_no < spec.n_docs:
        doc_id = f"doc{doc_no:04d}"
        doc_no += 1
        docs.append((doc_id, background(spec.doc_tokens)))

    corpus_path = out_dir / "corpus.jsonl"
    with corpus_path.open("w", encoding="utf-8") as f:
        for doc_id, tokens in docs:
            f.write(json.dumps({"id": doc_id, "text": " ".join(tokens)}, sort_keys=True))
            f.write("\n")

    topics_path = out_dir / "topics.tsv"
    with topics_path.open("w", encoding="utf-8") as f:
        for q in range(spec.n_queries):
            terms = " ".join(_query_term(q, t) for t in range(spec.query_terms))
            f.write(f"q{q:02d}\t{terms}\n")

    doc_qrels_path = out_dir / "doc_qrels.txt"
    with doc_qrels_path.open("w", encoding="utf-8") as f:
        for doc_id, (q, relevant, _) in sorted(doc_roles.items()):
            if relevant:
                f.write(f"q{q:02d} 0 {doc_id} 1\n")

    # Character spans of the topical window, derived from the real
    # segmentation so the qrels line up with tokenized offsets.
    store = ingest_corpus(corpus_path, "jsonl")
    params = SegmentationParams(window_len=spec.window_len)
    psg_qrels_path = out_dir / "psg_qrels.tsv"
    with psg_qrels_path.open("w", encoding="utf-8") as f:
        for doc_id, (q, relevant, window) in sorted(doc_roles.items()):
            if not relevant:
                continue
            passages = segment(store.get(doc_id), params)
            span = passages[window].char_range
            f.write(f"q{q:02d}\t{doc_id}\t{span[0]}\t{span[1]}\n")

    return {
        "corpus": corpus_path,
        "topics": topics_path,
        "doc_qrels": doc_qrels_path,
        "psg_qrels": psg_qrels_path,
    }
