from __future__ import annotations

import json

import pytest
from hypothesis import given, strategies as st

from rpd.text import (
    DataError, Dataset, LabeledExample, Sentence, SynonymLexicon, detokenize, load_dataset, load_lexicon,
    substitute, tokenize, write_dataset, write_lexicon,
)


def test_tokenize_peels_trailing_punctuation():
    assert tokenize("The movie was great.").tokens == ("the", "movie", "was", "great", ".")


def test_tokenize_empty():
    assert tokenize("").tokens == ()


def test_tokenize_keeps_internal_apostrophe():
    assert tokenize("don't stop").tokens == ("don't", "stop")


def test_tokenize_leading_and_trailing_runs():
    assert tokenize('("Wow!!")').tokens == ('("', "wow", '!!")')


def test_tokenize_punctuation_only_chunk_stays_whole():
    assert tokenize("wait ... what").tokens == ("wait", "...", "what")


def test_tokenize_keeps_raw():
    assert tokenize("Hello  World").raw == "Hello  World"


@given(st.text())
def test_tokenize_round_trip(text):
    tokens = tokenize(text).tokens
    assert tokenize(detokenize(tokens)).tokens == tokens
    assert all(tokens)


@given(st.text())
def test_tokenize_is_pure(text):
    assert tokenize(text) == tokenize(text)


def test_sentence_rejects_empty_token():
    with pytest.raises(ValueError):
        Sentence(("a", ""))


def test_substitute_single_replacement():
    s = Sentence.from_tokens(["good", "film"])
    assert substitute(s, 0, "fine").tokens == ("fine", "film")
    assert s.tokens == ("good", "film")


def test_substitute_identity_permitted():
    s = Sentence.from_tokens(["good", "film"])
    assert substitute(s, 1, "film").tokens == ("good", "film")


def test_substitute_out_of_range():
    with pytest.raises(IndexError):
        substitute(Sentence.from_tokens(["good"]), 3, "x")


@given(st.lists(st.sampled_from(["a", "b", "c", "dd"]), min_size=1, max_size=8), st.data())
def test_substitute_preserves_length_and_input(tokens, data):
    s = Sentence.from_tokens(tokens)
    i = data.draw(st.integers(0, len(tokens) - 1))
    out = substitute(s, i, "zz")
    assert len(out) == len(s)
    assert s.tokens == tuple(tokens)
    assert [k for k in range(len(s)) if out.tokens[k] != s.tokens[k]] in ([], [i])


def test_dataset_rejects_label_out_of_range():
    with pytest.raises(DataError):
        Dataset((LabeledExample(Sentence.from_tokens(["a"]), 2),), 2)


def test_load_jsonl(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text('{"text": "good film", "label": 1}\n{"text": "bad film", "label": 0}\n')
    ds = load_dataset(p)
    assert len(ds) == 2 and ds.class_count == 2
    assert ds.labels == [1, 0]
    assert ds.examples[0].sentence.tokens == ("good", "film")


def test_load_csv(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text('text,label\ngood film,1\n"bad, bad film",0\nok,1\n')
    ds = load_dataset(p)
    assert len(ds) == 3
    assert ds.examples[1].sentence.tokens == ("bad", ",", "bad", "film")


def test_load_non_integer_label_names_line(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text('{"text": "good film", "label": "pos"}\n')
    with pytest.raises(DataError, match=r":1:"):
        load_dataset(p)


def test_load_malformed_json_names_line(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text('{"text": "a", "label": 0}\n{oops\n')
    with pytest.raises(DataError, match=r":2:"):
        load_dataset(p)


def test_load_label_outside_declared_count(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text('{"text": "a", "label": 3}\n')
    with pytest.raises(DataError):
        load_dataset(p, class_count=2)


def test_dataset_write_read_round_trip(tmp_path):
    ds = Dataset(tuple(LabeledExample(tokenize(t), y) for t, y in [("a b .", 0), ("c", 1)]), 2)
    p = tmp_path / "d.jsonl"
    write_dataset(ds, p)
    back = load_dataset(p)
    assert [ex.sentence.tokens for ex in back] == [ex.sentence.tokens for ex in ds]
    assert back.labels == ds.labels
    assert all(json.loads(line).keys() == {"text", "label"} for line in p.read_text().splitlines())


def test_lexicon_direct_read(tmp_path):
    p = tmp_path / "lex.tsv"
    p.write_text("good\tfine,great\n")
    lex = load_lexicon(p)
    assert lex.synonyms("good") == ("fine", "great")
    assert lex.synonyms("zzz") == ()


def test_lexicon_drops_self_synonym(tmp_path):
    p = tmp_path / "lex.tsv"
    p.write_text("good\tgood,fine\n")
    assert load_lexicon(p).synonyms("good") == ("fine",)


def test_lexicon_merges_duplicates_in_file_order(tmp_path):
    p = tmp_path / "lex.tsv"
    p.write_text("Good\tfine,great\n\ngood\tgreat,nice\n")
    assert load_lexicon(p).synonyms("good") == ("fine", "great", "nice")


def test_lexicon_missing_tab_names_line(tmp_path):
    p = tmp_path / "lex.tsv"
    p.write_text("good\tfine\nbad worse\n")
    with pytest.raises(DataError, match=r":2:"):
        load_lexicon(p)


words = st.text(alphabet="abcdef", min_size=1, max_size=4)


@given(st.lists(st.tuples(words, st.lists(words, max_size=4)), max_size=6))
def test_lexicon_invariants(pairs):
    lex = SynonymLexicon.from_pairs(pairs)
    for head, syns in lex.entries.items():
        assert head not in syns
        assert len(set(syns)) == len(syns)


@given(st.lists(st.tuples(words, st.lists(words, min_size=1, max_size=4)), max_size=6))
def test_lexicon_file_round_trip(tmp_path_factory, pairs):
    lex = SynonymLexicon.from_pairs(pairs)
    p = tmp_path_factory.mktemp("lex") / "lex.tsv"
    write_lexicon(lex, p)
    back = load_lexicon(p)
    assert {h: s for h, s in back.entries.items() if s} == {h: s for h, s in lex.entries.items() if s}
