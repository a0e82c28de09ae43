"""Text encoders and exact cosine TopM search over dense vector indexes."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import struct
import time
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

logger = logging.getLogger(__name__)

INDEX_MAGIC = b"GKGX"
INDEX_VERSION = 1
INDEX_KINDS = {"entity": 0, "triple": 1, "relation": 2}
_HEADER = struct.Struct("<4sIBQI")

# scores closer than this are treated as ties (broken by ascending id)
SCORE_DECIMALS = 10

DEFAULT_REMOTE_MODEL = "sentence-transformers/all-MiniLM-L6-v2"

_TOKEN = re.compile(r"\w+", re.UNICODE)


class DimensionError(ValueError):
    pass


class RemoteServiceError(RuntimeError):
    pass


class TextEncoder(Protocol):
    identifier: str
    dim: int

    def encode(self, text: str) -> np.ndarray: ...

    def encode_batch(self, texts: Sequence[str]) -> np.ndarray: ...

    def encode_concat(self, parts: Sequence[str]) -> np.ndarray: ...


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def _unit(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("cannot normalise a zero vector")
    return v / n


class HashEncoder:
    """Signed feature hashing of lower-cased word tokens into ``dim`` buckets.

    ``raw`` returns the integer bucket counts, which add exactly under text
    concatenation; ``encode`` is their L2 normalisation. With ``sublinear``
    each count ``c`` is damped to ``sign(c) * log1p(|c|)`` first, so repeated
    words do not swamp the vector. After :meth:`fit_idf` every bucket is also
    scaled by its smoothed inverse document frequency. Texts with no tokens
    (or whose signed counts cancel) map to a fixed reserved unit vector.
    """

    def __init__(self, dim: int = 64, seed: int = 0, sublinear: bool = False,
                 idf: np.ndarray | None = None):
        if dim < 8:
            raise ValueError("hash encoder needs dim >= 8")
        self.dim = dim
        self.seed = seed
        self.sublinear = sublinear
        self._key = seed.to_bytes(8, "little", signed=True)
        self._bucket = lru_cache(maxsize=1 << 20)(self._bucket_uncached)
        rng = np.random.default_rng([seed, 0x5EED])
        self._reserved = _unit(rng.standard_normal(dim))
        self.idf = None
        self._set_idf(idf)

    def _set_idf(self, idf):
        if idf is not None:
            idf = np.asarray(idf, dtype=np.float64)
            if idf.shape != (self.dim,) or not np.all(np.isfinite(idf)) or idf.min() <= 0:
                raise ValueError("idf must hold one positive weight per bucket")
        self.idf = idf
        ident = f"hash-d{self.dim}-s{self.seed}" + ("-log" if self.sublinear else "")
        if idf is not None:
            ident += "-idf" + hashlib.blake2b(idf.tobytes(), digest_size=4).hexdigest()
        self.identifier = ident

    def fit_idf(self, texts: Sequence[str]) -> "HashEncoder":
        """Set bucket weights ``ln((1 + N) / (1 + df)) + 1`` from a corpus."""
        df = np.zeros(self.dim)
        n = 0
        for t in texts:
            buckets = {self._bucket(tok)[0] for tok in tokenize(t)}
            df[list(buckets)] += 1
            n += 1
        self._set_idf(np.log((1.0 + n) / (1.0 + df)) + 1.0)
        return self

    def _bucket_uncached(self, token: str) -> tuple[int, float]:
        h = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=self._key).digest()
        x = int.from_bytes(h, "little")
        return x % self.dim, (1.0 if (x >> 63) & 1 else -1.0)

    def raw(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim)
        for tok in tokenize(text):
            b, s = self._bucket(tok)
            v[b] += s
        return v

    def normalize(self, raw: np.ndarray) -> np.ndarray:
        if self.sublinear:
            raw = np.sign(raw) * np.log1p(np.abs(raw))
        if self.idf is not None:
            raw = raw * self.idf
        n = np.linalg.norm(raw)
        if n == 0:
            return self._reserved.copy()
        return raw / n

    def encode(self, text: str) -> np.ndarray:
        return self.normalize(self.raw(text))

    def encode_batch(self, texts: Sequence[str]) -> np.ndarray:
        out = np.empty((len(texts), self.dim))
        for i, t in enumerate(texts):
            out[i] = self.encode(t)
        return out

    def encode_concat(self, parts: Sequence[str]) -> np.ndarray:
        return self.normalize(sum((self.raw(p) for p in parts), np.zeros(self.dim)))


class RemoteEncoder:
    """Encoder backed by an OpenAI-compatible ``/embeddings`` endpoint.

    Responses are cached in memory by (identifier, text hash) and, when
    ``cache_path`` is given, appended to a JSON-lines file there.
    """

    def __init__(self, endpoint: str | None = None, model_id: str = DEFAULT_REMOTE_MODEL,
                 api_key: str | None = None, dim: int | None = None,
                 cache_path=None, max_retries: int = 4, backoff: float = 0.5,
                 timeout: float = 30.0, client=None):
        self.endpoint = endpoint or os.environ.get("GKG_EMBED_URL", "")
        if not self.endpoint:
            raise RemoteServiceError("no embeddings endpoint (set GKG_EMBED_URL)")
        self.model_id = model_id
        self.identifier = f"remote:{model_id}"
        self.api_key = api_key if api_key is not None else os.environ.get("GKG_API_KEY", "")
        self.dim = dim
        self.max_retries = max_retries
        self.backoff = backoff
        self.timeout = timeout
        self._client = client
        self._cache: dict[str, np.ndarray] = {}
        self.cache_path = Path(cache_path) if cache_path else None
        if self.cache_path and self.cache_path.exists():
            self._load_cache()

    def _key(self, text: str) -> str:
        return hashlib.sha256(f"{self.identifier}\0{text}".encode()).hexdigest()

    def _load_cache(self):
        with open(self.cache_path, encoding="utf-8") as fh:
            for line in fh:
                row = json.loads(line)
                self._cache[row["key"]] = np.asarray(row["v"], dtype=np.float64)

    def _post(self, texts: list[str]) -> list[list[float]]:
        import httpx

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {"model": self.model_id, "input": texts}
        client = self._client or httpx.Client(timeout=self.timeout)
        last = None
        try:
            for attempt in range(self.max_retries):
                try:
                    resp = client.post(self.endpoint, json=body, headers=headers)
                    resp.raise_for_status()
                    data = resp.json()["data"]
                    return [row["embedding"] for row in data]
                except (httpx.HTTPError, KeyError, ValueError) as exc:
                    last = exc
                    logger.warning("embedding request failed (attempt %d): %s", attempt + 1, exc)
                    time.sleep(self.backoff * 2 ** attempt)
        finally:
            if self._client is None:
                client.close()
        raise RemoteServiceError(f"embeddings endpoint failed after {self.max_retries} tries: {last}")

    def encode_batch(self, texts: Sequence[str]) -> np.ndarray:
        keys = [self._key(t) for t in texts]
        missing = sorted({k: t for k, t in zip(keys, texts) if k not in self._cache}.items())
        if missing:
            vecs = self._post([t for _, t in missing])
            if len(vecs) != len(missing):
                raise RemoteServiceError("embeddings response length mismatch")
            new_rows = []
            for (k, _), v in zip(missing, vecs):
                v = np.asarray(v, dtype=np.float64)
                if self.dim is None:
                    self.dim = len(v)
                elif len(v) != self.dim:
                    raise DimensionError(f"remote encoder returned dim {len(v)}, expected {self.dim}")
                self._cache[k] = _unit(v)
                new_rows.append({"key": k, "v": self._cache[k].tolist()})
            if self.cache_path:
                with open(self.cache_path, "a", encoding="utf-8") as fh:
                    for row in new_rows:
                        fh.write(json.dumps(row) + "\n")
        return np.stack([self._cache[k] for k in keys]) if keys else np.empty((0, self.dim or 0))

    def encode(self, text: str) -> np.ndarray:
        return self.encode_batch([text])[0]

    def encode_concat(self, parts: Sequence[str]) -> np.ndarray:
        return self.encode(" ".join(p for p in parts if p))


def hash_encoder(d: int = 64, seed: int = 0, sublinear: bool = False) -> HashEncoder:
    return HashEncoder(d, seed, sublinear)


def kg_corpus(kg) -> list[str]:
    """Entity names plus triple sentences: the texts the indexes are built from."""
    return list(kg.entities) + [triple_text(*kg.triple_texts(i)) for i in range(kg.n_triples)]


def remote_encoder(endpoint: str | None = None, model_id: str = DEFAULT_REMOTE_MODEL,
                   **kwargs) -> RemoteEncoder:
    return RemoteEncoder(endpoint, model_id, **kwargs)


def triple_text(h_text: str, r_text: str, t_text: str) -> str:
    for part in (h_text, r_text, t_text):
        if not part or not part.strip():
            raise ValueError("triple component text must be non-empty")
    return f"{h_text} {r_text} {t_text}"


def encode_triple(encoder: TextEncoder, h_text: str, r_text: str, t_text: str) -> np.ndarray:
    return encoder.encode(triple_text(h_text, r_text, t_text))


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


# -- vector index ----------------------------------------------------------

@dataclass
class VectorIndex:
    kind: str
    matrix: np.ndarray  # rows x dim, float64 holding float32-representable values

    def __post_init__(self):
        if self.kind not in INDEX_KINDS:
            raise ValueError(f"unknown index kind {self.kind!r}")
        m = np.asarray(self.matrix, dtype=np.float32).astype(np.float64)
        self.matrix = np.ascontiguousarray(m.reshape(len(m), -1) if m.size else m.reshape(0, 0))
        self.matrix.flags.writeable = False

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1] if self.matrix.ndim == 2 else 0

    def scores(self, query) -> np.ndarray:
        q = np.asarray(query, dtype=np.float64)
        if q.shape != (self.dim,):
            raise DimensionError(f"query dim {q.shape} vs index dim {self.dim}")
        return np.round(self.matrix @ q, SCORE_DECIMALS)

    def save(self, path):
        m = self.matrix.astype("<f4")
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(INDEX_MAGIC, INDEX_VERSION, INDEX_KINDS[self.kind],
                                  m.shape[0], m.shape[1] if m.ndim == 2 else 0))
            fh.write(m.tobytes())

    @classmethod
    def load(cls, path) -> "VectorIndex":
        with open(path, "rb") as fh:
            head = fh.read(_HEADER.size)
            if len(head) != _HEADER.size:
                raise ValueError(f"{path}: truncated header")
            magic, version, kind, rows, dim = _HEADER.unpack(head)
            if magic != INDEX_MAGIC:
                raise ValueError(f"{path}: bad magic {magic!r}")
            if version != INDEX_VERSION:
                raise ValueError(f"{path}: unsupported version {version}")
            data = np.frombuffer(fh.read(), dtype="<f4")
        if data.size != rows * dim:
            raise ValueError(f"{path}: expected {rows * dim} floats, found {data.size}")
        kind_name = {v: k for k, v in INDEX_KINDS.items()}[kind]
        return cls(kind_name, data.reshape(rows, dim))


def top_m(index: VectorIndex, query, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Ids and scores of the ``m`` rows most cosine-similar to ``query``.

    Descending by score; equal scores are ordered by ascending id.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if index.rows == 0:
        raise ValueError(f"empty {index.kind} index")
    return _select(index.scores(query), m)


def top_m_batch(index: VectorIndex, queries, m: int, chunk: int = 256):
    """:func:`top_m` for each row of ``queries`` using one matrix product per chunk.

    Scores are rounded exactly as in :meth:`VectorIndex.scores`; the product
    may differ from the single-query path in the last bits before rounding.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if index.rows == 0:
        raise ValueError(f"empty {index.kind} index")
    q = np.asarray(queries, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != index.dim:
        raise DimensionError(f"queries {q.shape} vs index dim {index.dim}")
    out = []
    for lo in range(0, len(q), chunk):
        block = np.round(index.matrix @ q[lo:lo + chunk].T, SCORE_DECIMALS)
        out.extend(_select(np.ascontiguousarray(block[:, j]), m) for j in range(block.shape[1]))
    return out


def _select(s: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    n = len(s)
    if m < n:
        kth = -np.partition(-s, m - 1)[m - 1]
        cand = np.flatnonzero(s >= kth)
    else:
        cand = np.arange(n)
    order = np.lexsort((cand, -s[cand]))[:m]
    ids = cand[order]
    return ids, s[ids]


def build_index(kind: str, encoder: TextEncoder, texts: Sequence[str]) -> VectorIndex:
    if not texts:
        return VectorIndex(kind, np.zeros((0, encoder.dim or 0)))
    return VectorIndex(kind, encoder.encode_batch(list(texts)))


@dataclass
class KGIndexes:
    entity: VectorIndex
    triple: VectorIndex
    relation: VectorIndex
    encoder_id: str = ""

    def save(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.entity.save(d / "entities.gkgx")
        self.triple.save(d / "triples.gkgx")
        self.relation.save(d / "relations.gkgx")
        (d / "encoder.txt").write_text(self.encoder_id + "\n", encoding="utf-8")

    @classmethod
    def load(cls, directory) -> "KGIndexes":
        d = Path(directory)
        enc = (d / "encoder.txt").read_text(encoding="utf-8").strip() if (d / "encoder.txt").exists() else ""
        return cls(VectorIndex.load(d / "entities.gkgx"), VectorIndex.load(d / "triples.gkgx"),
                   VectorIndex.load(d / "relations.gkgx"), enc)


def build_kg_indexes(kg, encoder: TextEncoder) -> KGIndexes:
    """Entity, triple and relation indexes for ``kg`` in one shared space."""
    tri_texts = [triple_text(*kg.triple_texts(i)) for i in range(kg.n_triples)]
    return KGIndexes(
        build_index("entity", encoder, kg.entities),
        build_index("triple", encoder, tri_texts),
        build_index("relation", encoder, kg.relations),
        encoder.identifier,
    )
