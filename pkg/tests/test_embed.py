import json

import httpx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gkgrec.embed import (DimensionError, HashEncoder, KGIndexes, RemoteEncoder, RemoteServiceError,
                          VectorIndex, build_kg_indexes, cosine, kg_corpus, tokenize, top_m,
                          top_m_batch, triple_text)

from conftest import random_kg
from oracles import topm_full_scan

texts = st.text(alphabet="abc xyz", min_size=0, max_size=30)


def test_tokenize_lowercases_words():
    assert tokenize("The Dark-Knight, 2008!") == ["the", "dark", "knight", "2008"]


@given(texts)
def test_hash_encoding_is_unit_norm(t):
    for enc in (HashEncoder(16), HashEncoder(16, sublinear=True)):
        assert np.linalg.norm(enc.encode(t)) == pytest.approx(1.0)


@given(texts, texts)
def test_raw_counts_add_under_concatenation(a, b):
    enc = HashEncoder(32, seed=5)
    assert np.array_equal(enc.raw(a + " " + b), enc.raw(a) + enc.raw(b))
    assert np.allclose(enc.encode_concat([a, b]), enc.encode(a + " " + b))


def test_hash_encoder_is_deterministic_and_seeded():
    a, b, c = HashEncoder(64, 1), HashEncoder(64, 1), HashEncoder(64, 2)
    assert np.array_equal(a.encode("blade runner"), b.encode("blade runner"))
    assert not np.array_equal(a.encode("blade runner"), c.encode("blade runner"))
    assert a.identifier == b.identifier != c.identifier


def test_empty_text_maps_to_reserved_vector():
    enc = HashEncoder(16)
    assert np.array_equal(enc.encode(""), enc.encode("   ..."))
    assert np.linalg.norm(enc.encode("")) == pytest.approx(1.0)


def test_sublinear_damps_repeats():
    enc = HashEncoder(256, sublinear=True)
    plain = HashEncoder(256)
    rep = "crime " * 9 + "heat"
    assert cosine(enc.encode(rep), enc.encode("heat")) > cosine(plain.encode(rep), plain.encode("heat"))


def test_idf_down_weights_common_words():
    corpus = ["genre drama x%d" % i for i in range(50)] + ["rare thing"]
    enc = HashEncoder(512, sublinear=True).fit_idf(corpus)
    common = enc._bucket("genre")[0]
    rare = enc._bucket("rare")[0]
    assert enc.idf[common] < enc.idf[rare]
    df = sum(any(enc._bucket(w)[0] == rare for w in tokenize(t)) for t in corpus)
    assert enc.idf[rare] == pytest.approx(np.log(52 / (1 + df)) + 1)
    assert "-idf" in enc.identifier
    assert enc.identifier != HashEncoder(512, sublinear=True).fit_idf(corpus[:10]).identifier


def test_idf_validation():
    with pytest.raises(ValueError):
        HashEncoder(8, idf=np.zeros(8))
    with pytest.raises(ValueError):
        HashEncoder(8, idf=np.ones(4))
    with pytest.raises(ValueError):
        HashEncoder(4)


def test_kg_corpus_covers_entities_and_triples(rng):
    kg = random_kg(rng, 6, 4)
    corpus = kg_corpus(kg)
    assert corpus[:6] == kg.entities
    assert corpus[6:] == [triple_text(*kg.triple_texts(i)) for i in range(4)]


def test_triple_text_rejects_empty_parts():
    with pytest.raises(ValueError):
        triple_text("Heat", " ", "crime")


def test_cosine_and_dimension_errors():
    assert cosine([1, 0], [1, 0]) == pytest.approx(1.0)
    assert cosine([1, 0], [-2, 0]) == pytest.approx(-1.0)
    with pytest.raises(DimensionError):
        cosine([1, 0], [1, 0, 0])
    idx = VectorIndex("entity", np.eye(3))
    with pytest.raises(DimensionError):
        idx.scores(np.ones(2))


@settings(max_examples=40)
@given(st.integers(0, 2**31), st.integers(1, 12))
def test_top_m_matches_full_scan(seed, m):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 40))
    # coarse values so exact ties are common
    mat = rng.integers(-2, 3, size=(n, 4)) / 2.0
    q = rng.integers(-2, 3, size=4) / 2.0
    ids, scores = top_m(VectorIndex("triple", mat), q, m)
    want_ids, want_scores = topm_full_scan(mat, q, m)
    assert ids.tolist() == want_ids
    assert scores.tolist() == want_scores


def test_top_m_tie_break_by_id():
    idx = VectorIndex("entity", np.array([[1.0, 0], [0, 1], [1, 0], [0.5, 0.5]]))
    ids, _ = top_m(idx, np.array([1.0, 0]), 3)
    assert ids.tolist() == [0, 2, 3]


def test_top_m_errors():
    with pytest.raises(ValueError):
        top_m(VectorIndex("entity", np.eye(2)), np.ones(2), 0)
    with pytest.raises(ValueError):
        top_m(VectorIndex("entity", np.zeros((0, 2))), np.ones(2), 1)


def test_top_m_batch_equals_single_queries(rng):
    enc = HashEncoder(32, sublinear=True)
    kg = random_kg(rng, 50, 120)
    idx = build_kg_indexes(kg, enc)
    queries = np.stack([enc.encode(t) for t in kg.entities[:30]])
    batch = top_m_batch(idx.triple, queries, 7, chunk=8)
    for q, (ids, scores) in zip(queries, batch):
        i2, s2 = top_m(idx.triple, q, 7)
        assert ids.tolist() == i2.tolist()
        assert np.array_equal(scores, s2)
    with pytest.raises(DimensionError):
        top_m_batch(idx.triple, np.ones((2, 5)), 3)


def test_index_stores_float32_values():
    idx = VectorIndex("entity", np.array([[0.1, 0.2]]))
    assert idx.matrix[0, 0] == np.float32(0.1)
    with pytest.raises(ValueError):
        idx.matrix[0, 0] = 1.0


def test_index_save_load_round_trip(tmp_path, rng):
    kg = random_kg(rng, 20, 30)
    idx = build_kg_indexes(kg, HashEncoder(16))
    idx.save(tmp_path)
    back = KGIndexes.load(tmp_path)
    assert back.encoder_id == idx.encoder_id
    for name in ("entity", "triple", "relation"):
        assert np.array_equal(getattr(back, name).matrix, getattr(idx, name).matrix)
        assert getattr(back, name).kind == name


def test_index_load_rejects_corruption(tmp_path):
    idx = VectorIndex("triple", np.ones((3, 4)))
    idx.save(tmp_path / "x.gkgx")
    data = (tmp_path / "x.gkgx").read_bytes()
    (tmp_path / "short.gkgx").write_bytes(data[:-4])
    (tmp_path / "magic.gkgx").write_bytes(b"NOPE" + data[4:])
    for name in ("short.gkgx", "magic.gkgx"):
        with pytest.raises(ValueError):
            VectorIndex.load(tmp_path / name)


# -- remote encoder ------------------------------------------------------------

def fake_embeddings(calls, fail_first=0, dim=3):
    def handler(request):
        calls.append(json.loads(request.content))
        if len(calls) <= fail_first:
            return httpx.Response(503)
        inputs = calls[-1]["input"]
        data = [{"embedding": [float(len(t)), 1.0, 0.0][:dim] + [0.0] * (dim - 3)} for t in inputs]
        return httpx.Response(200, json={"data": data})
    return httpx.Client(transport=httpx.MockTransport(handler))


def test_remote_encoder_batches_and_caches(tmp_path):
    calls = []
    cache = tmp_path / "cache.jsonl"
    enc = RemoteEncoder("http://x/embeddings", client=fake_embeddings(calls), cache_path=cache,
                        backoff=0)
    v = enc.encode_batch(["ab", "abcd", "ab"])
    assert len(calls) == 1 and sorted(calls[0]["input"]) == ["ab", "abcd"]
    assert enc.dim == 3
    assert np.allclose(np.linalg.norm(v, axis=1), 1.0)
    enc.encode("ab")
    assert len(calls) == 1
    again = RemoteEncoder("http://x/embeddings", client=fake_embeddings(calls), cache_path=cache)
    assert np.allclose(again.encode("abcd"), v[1])
    assert len(calls) == 1


def test_remote_encoder_retries_then_fails():
    calls = []
    enc = RemoteEncoder("http://x", client=fake_embeddings(calls, fail_first=1), backoff=0)
    enc.encode("a")
    assert len(calls) == 2
    calls = []
    enc = RemoteEncoder("http://x", client=fake_embeddings(calls, fail_first=9), backoff=0,
                        max_retries=3)
    with pytest.raises(RemoteServiceError):
        enc.encode("a")
    assert len(calls) == 3


def test_remote_encoder_dimension_mismatch():
    enc = RemoteEncoder("http://x", client=fake_embeddings([], dim=4), dim=3, backoff=0)
    with pytest.raises(DimensionError):
        enc.encode("a")


def test_remote_encoder_needs_endpoint(monkeypatch):
    monkeypatch.delenv("GKG_EMBED_URL", raising=False)
    with pytest.raises(RemoteServiceError):
        RemoteEncoder()
