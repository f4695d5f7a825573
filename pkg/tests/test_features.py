import random

import pytest
from hypothesis import given, settings, strategies as st

from leakguard.features import (DEFAULT_DELIMITERS, AutomatonVocabMismatch, EmptyVocabulary, Mode, Token,
                                Vocabulary, build_vocabulary, extract_dpi, extract_parse, tokenize)
from leakguard.model import IMEI, Dataset, PacketRecord, Protocol
from oracles import naive_tokens, wrapped_keys


def ds(payloads, labels=None, dictionary=None):
    recs = [PacketRecord(i, "app", "1.1.1.1", 80, 40000, Protocol.HTTP, payload=p,
                         labels=frozenset(labels[i]) if labels else frozenset())
            for i, p in enumerate(payloads)]
    return Dataset(tuple(recs), dictionary or {})


def test_default_delimiters():
    assert DEFAULT_DELIMITERS == frozenset(b"?=:&/ ,;\r\n\"")


def test_tokenize_examples():
    assert tokenize(b"") == []
    eq, amp = ord("="), ord("&")
    assert tokenize(b"a=1&b=2") == [Token(b"a", None, eq), Token(b"1", eq, amp), Token(b"b", amp, eq),
                                    Token(b"2", eq, None)]
    assert Token(b"profile", ord("/"), ord("?")) in tokenize(b"GET /profile?user=bob")


@settings(max_examples=300, deadline=None)
@given(st.binary(max_size=80).map(lambda b: bytes(c % 8 + 0x3a if c % 3 else c % 127 for c in b)))
def test_tokenize_matches_naive(payload):
    assert [tuple(t) for t in tokenize(payload)] == naive_tokens(payload, DEFAULT_DELIMITERS)


def test_frequency_filter():
    d = ds([b"common&rare%d=1&half%d=2" % (i, i % 2) for i in range(10)])
    v = build_vocabulary(d, mode=Mode.BARE, max_doc_frac=0.9)
    assert b"half0" in v.index and b"half1" in v.index
    assert b"common" not in v.index
    assert b"1" not in v.index
    assert b"rare1" not in v.index   # below min_count


def test_pii_literal_excluded():
    d = ds([b"imei=356938035643809"] * 5, dictionary={IMEI: ("356938035643809",)})
    for mode in Mode:
        v = build_vocabulary(d, mode=mode, max_doc_frac=1.0)
        assert all(b"356938035643809" not in e.literal for e in v.entries)


def test_location_pieces_excluded():
    from leakguard.model import LOCATION
    d = ds([b"ll=33.6405,-117.8443&x=1"] * 3, dictionary={LOCATION: ("33.6405", "-117.8443")})
    v = build_vocabulary(d, mode=Mode.WRAPPED, max_doc_frac=1.0)
    assert all(b"33.6405" not in e.literal and b"117.8443" not in e.literal for e in v.entries)


def test_hulu_style_vocabulary():
    payloads = [b"GET /profile?user=u%d HTTP/1.1" % i for i in range(5)] + \
               [b"GET /home?video_profile=%d HTTP/1.1" % i for i in range(5)]
    v = build_vocabulary(ds(payloads), mode=Mode.WRAPPED, max_doc_frac=0.9)
    assert b"/profile?" in v.index
    assert b"profile" not in v.index
    fid = v.index[b"/profile?"]
    auto = v.automaton()
    assert fid not in extract_dpi(b"GET /home?video_profile=7 HTTP/1.1", v, auto)
    assert extract_dpi(b"GET /home?video_profile=7 HTTP/1.1", v, auto) == \
        extract_parse(b"GET /home?video_profile=7 HTTP/1.1", v)


def test_empty_vocabulary():
    with pytest.raises(EmptyVocabulary):
        build_vocabulary(ds([]))
    with pytest.raises(EmptyVocabulary):
        build_vocabulary(ds([b"a", b"b"]))


def test_extract_simple():
    v = Vocabulary([b"&pw=", b"uid="], Mode.WRAPPED)
    auto = v.automaton()
    assert extract_parse(b"", v) == frozenset() == extract_dpi(b"", v, auto)
    assert extract_parse(b"x=1&pw=2", v) == {v.index[b"&pw="]}
    # boundary-flanked entry only counts at the payload start
    assert extract_parse(b"uid=5", v) == {v.index[b"uid="]} == extract_dpi(b"uid=5", v, auto)
    assert extract_parse(b"xuid=5", v) == frozenset() == extract_dpi(b"xuid=5", v, auto)


def test_automaton_mismatch():
    v1 = Vocabulary([b"&a="], Mode.WRAPPED)
    v2 = Vocabulary([b"&b="], Mode.WRAPPED)
    with pytest.raises(AutomatonVocabMismatch):
        extract_dpi(b"&a=", v1, v2.automaton())


def test_parse_matches_brute_force(small_data):
    v = build_vocabulary(small_data)
    rng = random.Random(1)
    for r in rng.sample(small_data.records, 200):
        keys = wrapped_keys(r.payload, v.delims)
        assert extract_parse(r.payload, v) == {i for lit, i in v.index.items() if lit in keys}


def test_bare_mode_parse():
    v = Vocabulary([b"pw", b"uid"], Mode.BARE)
    assert extract_parse(b"uid=1&pw=2&pwd=3", v) == {0, 1}
    assert v.anchor(0) == 0


def test_ids_dense_and_sorted(small_data):
    v = build_vocabulary(small_data)
    lits = [e.literal for e in v.entries]
    assert lits == sorted(lits)
    assert [e.feature_id for e in v.entries] == list(range(len(v)))


def test_vocab_json_round_trip(small_data):
    v = build_vocabulary(small_data)
    v2 = Vocabulary.from_json(v.to_json())
    assert v2 == v and v2.entries == v.entries and v2.delims == v.delims
    sub, mapping = v.restrict([5, 2, 9])
    assert [sub.literal(mapping[i]) for i in (2, 5, 9)] == [v.literal(i) for i in (2, 5, 9)]


word = st.sampled_from([b"pw", b"uid", b"profile", b"video_profile", b"x", b"1"])
delim = st.sampled_from([b"=", b"&", b"?", b"/", b" ", b"\r\n", b'"'])


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(word, delim), max_size=12), st.booleans(), st.booleans())
def test_dpi_equals_parse(parts, lead, trail):
    payload = b"".join(w + d for w, d in parts)
    if lead:
        payload = b"/" + payload
    if trail and payload:
        payload = payload[:-1]
    lits = set()
    for w in (b"pw", b"uid", b"profile", b"video_profile"):
        for left in (b"", b"=", b"&", b"?", b"/", b'"', b"\n"):
            for right in (b"", b"=", b"&", b"?", b"/", b'"', b"\r"):
                lits.add(left + w + right)
    v = Vocabulary(lits, Mode.WRAPPED)
    assert extract_dpi(payload, v, v.automaton()) == extract_parse(payload, v)
