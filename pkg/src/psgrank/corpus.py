"""Corpus ingestion: tokenization, stemming, stopwords, and the document store.

Documents keep every token (including stopwords) together with character
offsets into the raw text; queries have stopwords removed at load time.
The store records the identities of the tokenizer, stemmer and stopword
list in its manifest so downstream indexes and models are never mixed
across incompatible text analysis chains.
"""

from __future__ import annotations

import hashlib
import json
import re
import warnings
from collections import Counter
from dataclasses import dataclass
from importlib import resources as importlib_resources
from pathlib import Path
from typing import Iterable, Iterator

TOKENIZER_ID = "alnum-v1"
STORE_VERSION = 1

_TOKEN_RE = re.compile(r"[0-9A-Za-z]+")
_VOWELS = set("aeiou")


class CorpusError(ValueError):
    """Malformed corpus input or store/manifest inconsistency."""


@dataclass(frozen=True)
class Token:
    """A single token with character offsets into the source text."""

    surface: str
    stem: str
    char_start: int
    char_end: int
    is_stopword: bool


class Stemmer:
    """Base interface; subclasses must be deterministic and idempotent."""

    identity = "identity"

    def stem(self, word: str) -> str:
        return word


class LightStemmer(Stemmer):
    """Light English suffix stripper (plural / -ing / -ed removal).

    Rules, applied repeatedly until a fixpoint is reached:
      * ``-ies`` -> ``-y`` (len > 4), ``-sses`` -> ``-ss``, and a trailing
        ``-s`` is dropped unless the word ends in ``ss``/``us``/``is``;
      * ``-ing`` and ``-ed`` are stripped when at least three characters
        remain, with a trailing doubled consonant undoubled afterwards
        (``running`` -> ``run``) except for ``ll``/``ss``/``zz``.

    Iterating to a fixpoint guarantees idempotence (``teasing`` -> ``teas``
    -> ``tea`` in one call).
    """

    identity = "light-en-1"

    def stem(self, word: str) -> str:
        prev = None
        cur = word
        for _ in range(8):
            if cur == prev:
                break
            prev = cur
            cur = self._pass(cur)
        return cur

    @staticmethod
    def _undouble(word: str) -> str:
        if (
            len(word) >= 2
            and word[-1] == word[-2]
            and word[-1] not in _VOWELS
            and word[-1] not in "lsz"
        ):
            return word[:-1]
        return word

    def _pass(self, w: str) -> str:
        if w.endswith("ies") and len(w) > 4:
            w = w[:-3] + "y"
        elif w.endswith("sses"):
            w = w[:-2]
        elif (
            w.endswith("s")
            and len(w) > 3
            and not w.endswith(("ss", "us", "is"))
        ):
            w = w[:-1]
        if w.endswith("ing") and len(w) - 3 >= 3:
            w = self._undouble(w[:-3])
        elif w.endswith("ed") and len(w) - 2 >= 3:
            w = self._undouble(w[:-2])
        return w


STEMMERS: dict[str, type[Stemmer]] = {
    Stemmer.identity: Stemmer,
    LightStemmer.identity: LightStemmer,
}


def stemmer_by_identity(identity: str) -> Stemmer:
    try:
        return STEMMERS[identity]()
    except KeyError:
        raise CorpusError(f"unknown stemmer identity: {identity!r}") from None


class StopwordList:
    """Named set of lowercase stopwords with case-insensitive lookup."""

    def __init__(self, name: str, terms: Iterable[str]):
        self.name = name
        self.terms = frozenset(t.lower() for t in terms)
        if not self.terms:
            raise CorpusError(f"stopword list {name!r} is empty")

    def __contains__(self, word: str) -> bool:
        return word.lower() in self.terms

    def __len__(self) -> int:
        return len(self.terms)

    @classmethod
    def from_file(cls, path: str | Path, name: str | None = None) -> "StopwordList":
        """Load a one-term-per-line file; '#' starts a comment line."""
        path = Path(path)
        terms = []
        for line in path.read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if line and not line.startswith("#"):
                terms.append(line)
        return cls(name or path.stem, terms)


def default_stopwords() -> StopwordList:
    """The bundled 418-term INQUERY-style list."""
    ref = importlib_resources.files("psgrank.data") / "stopwords_inquery.txt"
    with importlib_resources.as_file(ref) as path:
        lst = StopwordList.from_file(path, name="inquery-418")
    return lst


class Tokenizer:
    """Splits text into maximal alphanumeric runs with character offsets.

    Lowercasing applies only to the stem and stopword lookup; the surface
    form is the verbatim slice of the input so offsets round-trip.
    """

    def __init__(self, stemmer: Stemmer | None = None, stopwords: StopwordList | None = None):
        self.stemmer = stemmer or LightStemmer()
        self.stopwords = stopwords or default_stopwords()
        self._stem_cache: dict[str, str] = {}

    @property
    def identity(self) -> str:
        return TOKENIZER_ID

    def tokenize(self, text: str) -> list[Token]:
        tokens = []
        for m in _TOKEN_RE.finditer(text):
            surface = m.group(0)
            lower = surface.lower()
            stem = self._stem_cache.get(lower)
            if stem is None:
                stem = self.stemmer.stem(lower)
                self._stem_cache[lower] = stem
            tokens.append(
                Token(
                    surface=surface,
                    stem=stem,
                    char_start=m.start(),
                    char_end=m.end(),
                    is_stopword=lower in self.stopwords,
                )
            )
        return tokens


class Document:
    """A tokenized document; stopwords are retained."""

    __slots__ = ("doc_id", "raw_text", "tokens", "_stems", "_stem_counts")

    def __init__(self, doc_id: str, raw_text: str, tokens: list[Token]):
        self.doc_id = doc_id
        self.raw_text = raw_text
        self.tokens = tokens
        self._stems: list[str] | None = None
        self._stem_counts: Counter | None = None

    @property
    def length(self) -> int:
        return len(self.tokens)

    def stems(self) -> list[str]:
        if self._stems is None:
            self._stems = [t.stem for t in self.tokens]
        return self._stems

    def stem_counts(self) -> Counter:
        if self._stem_counts is None:
            self._stem_counts = Counter(self.stems())
        return self._stem_counts

    def __repr__(self) -> str:
        return f"Document({self.doc_id!r}, {self.length} tokens)"


class Query:
    """A tokenized query; stopwords are removed."""

    __slots__ = ("query_id", "text", "tokens")

    def __init__(self, query_id: str, text: str, tokenizer: Tokenizer):
        self.query_id = query_id
        self.text = text
        self.tokens = [t for t in tokenizer.tokenize(text) if not t.is_stopword]

    def stems(self) -> list[str]:
        return [t.stem for t in self.tokens]

    @property
    def unique_term_count(self) -> int:
        return len(set(t.stem for t in self.tokens))

    def __repr__(self) -> str:
        return f"Query({self.query_id!r}, {self.text!r})"


class CorpusStore:
    """Immutable collection of documents plus the analysis-chain manifest."""

    def __init__(self, documents: list[Document], tokenizer: Tokenizer, source_format: str):
        self.documents = documents
        self.tokenizer = tokenizer
        self.source_format = source_format
        self.by_id = {d.doc_id: d for d in documents}

    def __len__(self) -> int:
        return len(self.documents)

    def get(self, doc_id: str) -> Document:
        return self.by_id[doc_id]

    def doc_ids(self) -> list[str]:
        return [d.doc_id for d in self.documents]

    def checksum(self) -> str:
        return _records_checksum((d.doc_id, d.raw_text) for d in self.documents)

    def manifest(self) -> dict:
        return {
            "version": STORE_VERSION,
            "format": self.source_format,
            "doc_count": len(self.documents),
            "token_count": sum(d.length for d in self.documents),
            "tokenizer": self.tokenizer.identity,
            "stemmer": self.tokenizer.stemmer.identity,
            "stopwords": self.tokenizer.stopwords.name,
            "checksum": self.checksum(),
        }

    def save(self, directory: str | Path) -> Path:
        """Persist docs + manifest; byte-identical for identical inputs."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        docs_path = directory / "docs.jsonl"
        with docs_path.open("w", encoding="utf-8") as f:
            for d in self.documents:
                f.write(json.dumps({"id": d.doc_id, "text": d.raw_text}, sort_keys=True))
                f.write("\n")
        manifest_path = directory / "manifest.json"
        manifest_path.write_text(
            json.dumps(self.manifest(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        return manifest_path

    @classmethod
    def load(cls, directory: str | Path, stopwords: StopwordList | None = None) -> "CorpusStore":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
        if manifest.get("version") != STORE_VERSION:
            raise CorpusError(f"unsupported store version: {manifest.get('version')}")
        stopwords = stopwords or default_stopwords()
        if stopwords.name != manifest["stopwords"]:
            raise CorpusError(
                f"stopword list mismatch: store has {manifest['stopwords']!r}, "
                f"got {stopwords.name!r}"
            )
        tokenizer = Tokenizer(stemmer_by_identity(manifest["stemmer"]), stopwords)
        records = []
        with (directory / "docs.jsonl").open(encoding="utf-8") as f:
            for line in f:
                rec = json.loads(line)
                records.append((rec["id"], rec["text"]))
        if _records_checksum(records) != manifest["checksum"]:
            raise CorpusError("store checksum mismatch: docs.jsonl was modified")
        docs = [Document(doc_id, text, tokenizer.tokenize(text)) for doc_id, text in records]
        store = cls(docs, tokenizer, manifest["format"])
        return store


def _records_checksum(records: Iterable[tuple[str, str]]) -> str:
    h = hashlib.sha256()
    for doc_id, text in records:
        h.update(doc_id.encode("utf-8"))
        h.update(b"\x00")
        h.update(text.encode("utf-8"))
        h.update(b"\x01")
    return h.hexdigest()


def _iter_jsonl_records(path: Path) -> Iterator[tuple[str, str]]:
    with path.open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed JSON record: {exc}") from None
            if not isinstance(rec, dict) or "id" not in rec or "text" not in rec:
                raise CorpusError(f"{path}:{lineno}: record must carry 'id' and 'text' fields")
            text = rec["text"]
            if rec.get("title"):
                text = rec["title"] + "\n" + text
            yield str(rec["id"]), text


_DOC_RE = re.compile(r"<DOC>(.*?)</DOC>", re.DOTALL)
_DOCNO_RE = re.compile(r"<DOCNO>\s*(.*?)\s*</DOCNO>", re.DOTALL)
_TEXT_RE = re.compile(r"<TEXT>(.*?)</TEXT>", re.DOTALL)


def _iter_trecweb_records(path: Path) -> Iterator[tuple[str, str]]:
    data = path.read_text(encoding="utf-8")
    if "<DOC>" in data and "</DOC>" not in data:
        raise CorpusError(f"{path}: unterminated <DOC> block")
    for m in _DOC_RE.finditer(data):
        block = m.group(1)
        docno = _DOCNO_RE.search(block)
        if docno is None:
            offset = m.start()
            raise CorpusError(f"{path}: <DOC> block at byte {offset} has no <DOCNO>")
        texts = _TEXT_RE.findall(block)
        if texts:
            body = "\n".join(t.strip() for t in texts)
        else:
            body = _DOCNO_RE.sub("", block).strip()
        yield docno.group(1), body


def ingest_corpus(
    source: str | Path,
    corpus_format: str = "jsonl",
    tokenizer: Tokenizer | None = None,
) -> CorpusStore:
    """Read a corpus file into a CorpusStore.

    Supported formats: ``jsonl`` (objects with id/text and optional title)
    and ``trecweb`` (``<DOC>`` blocks with ``<DOCNO>`` and body text).
    Duplicate ids and malformed records raise :class:`CorpusError`; empty
    texts are kept (with a warning) so qrels referencing them resolve.
    """
    path = Path(source)
    if not path.exists():
        raise CorpusError(f"corpus file not found: {path}")
    if corpus_format == "jsonl":
        records = _iter_jsonl_records(path)
    elif corpus_format == "trecweb":
        records = _iter_trecweb_records(path)
    else:
        raise CorpusError(f"unknown corpus format: {corpus_format!r}")

    tokenizer = tokenizer or Tokenizer()
    documents = []
    seen = set()
    for doc_id, text in records:
        if doc_id in seen:
            raise CorpusError(f"duplicate doc_id: {doc_id!r}")
        seen.add(doc_id)
        tokens = tokenizer.tokenize(text)
        if not tokens:
            warnings.warn(f"document {doc_id!r} has no tokens", stacklevel=2)
        documents.append(Document(doc_id, text, tokens))
    return CorpusStore(documents, tokenizer, corpus_format)


def load_topics(path: str | Path, tokenizer: Tokenizer | None = None) -> list[Query]:
    """Load a tab-separated topics file: ``query_id<TAB>title text``."""
    path = Path(path)
    tokenizer = tokenizer or Tokenizer()
    queries = []
    seen = set()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t", 1)
        if len(parts) != 2:
            raise CorpusError(f"{path}:{lineno}: expected query_id<TAB>text")
        query_id, text = parts[0].strip(), parts[1].strip()
        if query_id in seen:
            raise CorpusError(f"{path}:{lineno}: duplicate query_id {query_id!r}")
        seen.add(query_id)
        queries.append(Query(query_id, text, tokenizer))
    return queries
