import json

import pytest

from psgrank.corpus import (
    CorpusError,
    CorpusStore,
    LightStemmer,
    Query,
    StopwordList,
    Tokenizer,
    default_stopwords,
    ingest_corpus,
    load_topics,
)
from conftest import write_jsonl


class TestTokenize:
    def test_punctuation_split(self, tokenizer):
        tokens = tokenizer.tokenize("Cat, cat!")
        assert len(tokens) == 2
        assert [t.stem for t in tokens] == ["cat", "cat"]
        assert [(t.char_start, t.char_end) for t in tokens] == [(0, 3), (5, 8)]

    def test_empty_input(self, tokenizer):
        assert tokenizer.tokenize("") == []

    def test_alphanumeric_runs(self, tokenizer):
        tokens = tokenizer.tokenize("IR-2024 test")
        assert [t.stem for t in tokens] == ["ir", "2024", "test"]

    def test_offsets_round_trip(self, tokenizer):
        text = "The  Quick,   brown fox-like 42 things."
        for t in tokenizer.tokenize(text):
            assert text[t.char_start : t.char_end] == t.surface

    def test_deterministic(self, tokenizer):
        text = "Some text; with punctuation... and MORE."
        assert tokenizer.tokenize(text) == tokenizer.tokenize(text)


class TestStemmer:
    @pytest.mark.parametrize(
        "word,expected",
        [
            ("cats", "cat"),
            ("cat", "cat"),
            ("running", "run"),
            ("flies", "fly"),
            ("glasses", "glass"),
            ("wanted", "want"),
            ("hopped", "hop"),
            ("falling", "fall"),
            ("pressed", "press"),
        ],
    )
    def test_reference_vectors(self, word, expected):
        assert LightStemmer().stem(word) == expected

    def test_idempotent(self):
        stemmer = LightStemmer()
        words = [
            "cats", "running", "teasing", "meetings", "studies", "boxes",
            "promising", "focusing", "buildings", "a", "is", "sses",
        ]
        for w in words:
            once = stemmer.stem(w)
            assert stemmer.stem(once) == once


class TestStopwords:
    def test_bundled_list_size_and_name(self):
        lst = default_stopwords()
        assert lst.name == "inquery-418"
        assert len(lst) == 418

    def test_case_insensitive_lookup(self):
        lst = StopwordList("x", ["the"])
        assert "The" in lst and "THE" in lst

    def test_empty_list_rejected(self):
        with pytest.raises(CorpusError):
            StopwordList("x", [])

    def test_comments_in_file(self, tmp_path):
        p = tmp_path / "stop.txt"
        p.write_text("# header\nthe\n\nof\n")
        lst = StopwordList.from_file(p)
        assert lst.terms == frozenset({"the", "of"})


class TestQuery:
    def test_stopwords_removed_from_queries_only(self, tokenizer):
        q = Query("q1", "the cat and the dog", tokenizer)
        assert [t.stem for t in q.tokens] == ["cat", "dog"]
        doc_tokens = tokenizer.tokenize("the cat and the dog")
        assert len(doc_tokens) == 5  # documents retain stopwords

    def test_unique_term_count(self, tokenizer):
        q = Query("q1", "cats cat dog", tokenizer)
        assert q.unique_term_count == 2


class TestIngest:
    def test_jsonl_basic(self, tmp_path, tokenizer):
        path = tmp_path / "c.jsonl"
        write_jsonl(path, [{"id": "d1", "text": "The cat sat."}])
        store = ingest_corpus(path, tokenizer=tokenizer)
        doc = store.get("d1")
        assert doc.length == 3
        assert [t.surface for t in doc.tokens] == ["The", "cat", "sat"]

    def test_title_prepended(self, tmp_path, tokenizer):
        path = tmp_path / "c.jsonl"
        write_jsonl(path, [{"id": "d1", "text": "body", "title": "Top"}])
        store = ingest_corpus(path, tokenizer=tokenizer)
        assert [t.surface for t in store.get("d1").tokens] == ["Top", "body"]

    def test_duplicate_id_rejected(self, tmp_path, tokenizer):
        path = tmp_path / "c.jsonl"
        write_jsonl(path, [{"id": "d1", "text": "a"}, {"id": "d1", "text": "b"}])
        with pytest.raises(CorpusError, match="d1"):
            ingest_corpus(path, tokenizer=tokenizer)

    def test_malformed_record_names_line(self, tmp_path, tokenizer):
        path = tmp_path / "c.jsonl"
        path.write_text('{"id": "d1", "text": "ok"}\n{broken\n')
        with pytest.raises(CorpusError, match=":2"):
            ingest_corpus(path, tokenizer=tokenizer)

    def test_missing_fields_rejected(self, tmp_path, tokenizer):
        path = tmp_path / "c.jsonl"
        write_jsonl(path, [{"id": "d1"}])
        with pytest.raises(CorpusError, match="text"):
            ingest_corpus(path, tokenizer=tokenizer)

    def test_empty_text_kept_with_warning(self, tmp_path, tokenizer):
        path = tmp_path / "c.jsonl"
        write_jsonl(path, [{"id": "d1", "text": ""}])
        with pytest.warns(UserWarning, match="d1"):
            store = ingest_corpus(path, tokenizer=tokenizer)
        assert store.get("d1").length == 0

    def test_missing_file(self, tokenizer):
        with pytest.raises(CorpusError, match="not found"):
            ingest_corpus("no/such/file.jsonl", tokenizer=tokenizer)

    def test_trecweb(self, tmp_path, tokenizer):
        path = tmp_path / "c.trecweb"
        path.write_text(
            "<DOC>\n<DOCNO>doc-1</DOCNO>\n<TEXT>hello there</TEXT>\n</DOC>\n"
            "<DOC>\n<DOCNO>doc-2</DOCNO>\n<TEXT>more</TEXT>\n<TEXT>text</TEXT>\n</DOC>\n"
        )
        store = ingest_corpus(path, "trecweb", tokenizer=tokenizer)
        assert store.doc_ids() == ["doc-1", "doc-2"]
        assert [t.surface for t in store.get("doc-2").tokens] == ["more", "text"]

    def test_trecweb_missing_docno(self, tmp_path, tokenizer):
        path = tmp_path / "c.trecweb"
        path.write_text("<DOC>\n<TEXT>orphan</TEXT>\n</DOC>\n")
        with pytest.raises(CorpusError, match="DOCNO"):
            ingest_corpus(path, "trecweb", tokenizer=tokenizer)


class TestStorePersistence:
    def test_save_load_round_trip(self, tmp_path, tokenizer):
        path = tmp_path / "c.jsonl"
        write_jsonl(path, [{"id": "d1", "text": "alpha beta"}, {"id": "d2", "text": "gamma"}])
        store = ingest_corpus(path, tokenizer=tokenizer)
        store.save(tmp_path / "store")
        loaded = CorpusStore.load(
            tmp_path / "store", stopwords=tokenizer.stopwords
        )
        assert loaded.doc_ids() == store.doc_ids()
        assert loaded.get("d1").tokens == store.get("d1").tokens
        assert loaded.manifest() == store.manifest()

    def test_byte_identical_stores(self, tmp_path, tokenizer):
        path = tmp_path / "c.jsonl"
        write_jsonl(path, [{"id": "d1", "text": "alpha beta"}])
        ingest_corpus(path, tokenizer=tokenizer).save(tmp_path / "s1")
        ingest_corpus(path, tokenizer=tokenizer).save(tmp_path / "s2")
        for name in ("docs.jsonl", "manifest.json"):
            assert (tmp_path / "s1" / name).read_bytes() == (tmp_path / "s2" / name).read_bytes()

    def test_manifest_records_identities(self, tmp_path, tokenizer):
        path = tmp_path / "c.jsonl"
        write_jsonl(path, [{"id": "d1", "text": "alpha"}])
        manifest = ingest_corpus(path, tokenizer=tokenizer).manifest()
        assert manifest["stemmer"] == "light-en-1"
        assert manifest["stopwords"] == "tiny"
        assert manifest["tokenizer"] == "alnum-v1"
        assert manifest["doc_count"] == 1

    def test_tampered_store_detected(self, tmp_path, tokenizer):
        path = tmp_path / "c.jsonl"
        write_jsonl(path, [{"id": "d1", "text": "alpha"}])
        ingest_corpus(path, tokenizer=tokenizer).save(tmp_path / "store")
        docs = tmp_path / "store" / "docs.jsonl"
        docs.write_text(json.dumps({"id": "d1", "text": "tampered"}) + "\n")
        with pytest.raises(CorpusError, match="checksum"):
            CorpusStore.load(tmp_path / "store", stopwords=tokenizer.stopwords)


class TestTopics:
    def test_load(self, tmp_path, tokenizer):
        path = tmp_path / "topics.tsv"
        path.write_text("q1\tthe cat\nq2\tdogs running\n")
        queries = load_topics(path, tokenizer)
        assert [q.query_id for q in queries] == ["q1", "q2"]
        assert queries[0].stems() == ["cat"]
        assert queries[1].stems() == ["dog", "run"]

    def test_duplicate_query_id(self, tmp_path, tokenizer):
        path = tmp_path / "topics.tsv"
        path.write_text("q1\ta\nq1\tb\n")
        with pytest.raises(CorpusError, match="q1"):
            load_topics(path, tokenizer)

    def test_malformed_line(self, tmp_path, tokenizer):
        path = tmp_path / "topics.tsv"
        path.write_text("q1 no tab here\n")
        with pytest.raises(CorpusError, match=":1"):
            load_topics(path, tokenizer)
